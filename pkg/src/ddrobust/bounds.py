"""Closed-form stability certificates for the perturbed closed loop.

Given the B J_i sensitivity products and the per-entry noise levels, these
routines evaluate the two-sided probability bounds on instability, the
support-size convergence rate, and the coarse variance envelope
sigma_max^2 |supp| J_max^2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict

import numpy as np

from .linalg import (
    EPS_FLOOR,
    as_matrix,
    condition_number_spectral,
    eigenvalues,
    q_function,
    spectral_norm,
    spectral_radius,
)
from .sensitivity import JacobianBundle


logger = logging.getLogger(__name__)


class StabilityError(RuntimeError):
    """The nominal closed loop violates the standing stability assumption."""


@dataclass(frozen=True)
class BoundsReport:
    """Everything the two-sided certificate produces for one configuration."""

    v_bar: float
    v_lower: float
    kappa: float
    kappa_v: float
    mu: float
    rho_nominal: float
    lower: float
    upper_raw: float
    upper_clamped: float
    n: int
    b_source: str | None

    def to_json(self) -> dict:
        return asdict(self)


def _require_bj(bundle: JacobianBundle) -> np.ndarray:
    if bundle.bj is None:
        raise ValueError("bundle has no B attached; call with_b first")
    return bundle.bj


def variance_params(bundle: JacobianBundle, sigmas) -> tuple[float, float]:
    """Variance proxies of the perturbation as seen by the closed loop.

    Returns (v_bar, v_lower): the matrix-variance norm driving the upper
    bound and the scalar trace variance driving the lower bound.
    """
    bj = _require_bj(bundle)
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    if sigmas.size != bundle.size:
        raise ValueError(f"need {bundle.size} sigmas, got {sigmas.size}")
    s2 = sigmas**2
    left = np.tensordot(s2, np.matmul(bj, np.transpose(bj, (0, 2, 1))), axes=1)
    right = np.tensordot(s2, np.matmul(np.transpose(bj, (0, 2, 1)), bj), axes=1)
    v_bar = max(spectral_norm(left), spectral_norm(right))
    traces = np.trace(bj, axis1=1, axis2=2)
    v_lower = float(np.sum(s2 * traces**2))
    return v_bar, v_lower


def _q_ratio(numerator: float, variance: float) -> float:
    """Q(numerator / sqrt(variance)) with the variance -> 0 limit built in."""
    if variance > 0.0:
        return q_function(numerator / math.sqrt(variance))
    if numerator > 0.0:
        return 0.0
    if numerator < 0.0:
        return 1.0
    return 0.5


def _floor(p: float) -> float:
    """Reporting floor: positive underflowed values become machine epsilon."""
    if 0.0 < p < EPS_FLOOR:
        return EPS_FLOOR
    return p


def theorem1_bounds(
    a_cl,
    v_bar: float,
    v_lower: float,
    b_source: str | None = None,
) -> BoundsReport:
    """Two-sided probability bound on rho of the perturbed closed loop >= 1.

    lower = Q((n+mu)/sqrt(v_lower)) + Q((n-mu)/sqrt(v_lower)),
    upper = 2n exp(-(1-rho)^2 / (2 v_bar kappa^2)).

    Requires a stable nominal loop; a singular A_cl (kappa undefined) is an
    error. The raw upper bound may exceed one and is reported both raw and
    clamped.
    """
    a_cl = as_matrix(a_cl, "A_cl")
    if v_bar < 0.0 or v_lower < 0.0:
        raise ValueError("variance parameters must be nonnegative")
    n = a_cl.shape[0]
    rho = spectral_radius(a_cl)
    if rho >= 1.0:
        raise StabilityError(f"nominal closed loop is not stable: rho = {rho:.6g}")
    kappa = condition_number_spectral(a_cl)
    if math.isinf(kappa):
        raise StabilityError("A_cl is singular; its condition number is undefined")
    kappa_v = eigenvalues(a_cl).kappa_v
    mu = float(np.trace(a_cl))

    lower = _q_ratio(n + mu, v_lower) + _q_ratio(n - mu, v_lower)
    if v_bar > 0.0:
        exponent = -((1.0 - rho) ** 2) / (2.0 * v_bar * kappa**2)
        upper_raw = 2.0 * n * math.exp(exponent)
    else:
        upper_raw = 0.0

    lower = _floor(lower)
    upper_raw = _floor(upper_raw)
    return BoundsReport(
        v_bar=float(v_bar),
        v_lower=float(v_lower),
        kappa=float(kappa),
        kappa_v=float(kappa_v),
        mu=mu,
        rho_nominal=float(rho),
        lower=float(lower),
        upper_raw=float(upper_raw),
        upper_clamped=float(min(1.0, upper_raw)),
        n=n,
        b_source=b_source,
    )


@dataclass(frozen=True)
class RateBound:
    """Support-size rate bound built from the worst diagonal sensitivity.

    ``chain_holds`` records whether v_lower >= n^2 gamma^2 |supp| on this
    instance; the derivation presumes it, but mixed-sign trace patterns can
    break it numerically, so it is observed rather than asserted.
    """

    gamma: float
    support_size: int
    bound: float
    chain_holds: bool


def theorem2_rate(bundle: JacobianBundle, sigmas) -> RateBound:
    """Lower-bound rate 2 Q(2 / sqrt(gamma^2 |supp|)).

    gamma = min_i sigma_i * (min of diag(B J_i)); the bound grows to one
    as the support grows, independently of the state dimension.
    """
    bj = _require_bj(bundle)
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    if sigmas.size != bundle.size:
        raise ValueError(f"need {bundle.size} sigmas, got {sigmas.size}")
    alphas = np.min(np.diagonal(bj, axis1=1, axis2=2), axis=1)
    gamma = float(np.min(sigmas * alphas))
    k = bundle.size
    if gamma == 0.0:
        bound = 0.0
    else:
        bound = 2.0 * q_function(2.0 / math.sqrt(gamma**2 * k))
    n = bj.shape[1]
    traces = np.trace(bj, axis1=1, axis2=2)
    v_lower = float(np.sum(sigmas**2 * traces**2))
    chain_holds = bool(v_lower >= n**2 * gamma**2 * k)
    if not chain_holds:
        logger.info(
            "rate-bound chain inequality failed: v_lower=%.6g < n^2 gamma^2 |supp|=%.6g",
            v_lower,
            n**2 * gamma**2 * k,
        )
    return RateBound(gamma=gamma, support_size=k, bound=bound, chain_holds=chain_holds)


@dataclass(frozen=True)
class JmaxEnvelope:
    sigma_max: float
    j_max: float
    envelope: float
    v_bar: float


def jmax_envelope(bundle: JacobianBundle, sigmas) -> JmaxEnvelope:
    """Coarse envelope sigma_max^2 |supp| J_max^2 dominating v_bar.

    The containment v_bar <= envelope is a theorem; a numerical violation
    beyond 1e-10 indicates a broken bundle and raises.
    """
    bj = _require_bj(bundle)
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    if sigmas.size != bundle.size:
        raise ValueError(f"need {bundle.size} sigmas, got {sigmas.size}")
    j_max = max(spectral_norm(bj[i]) for i in range(bundle.size))
    sigma_max = float(np.max(sigmas))
    envelope = sigma_max**2 * bundle.size * j_max**2
    v_bar, _ = variance_params(bundle, sigmas)
    if v_bar > envelope + 1e-10:
        raise ArithmeticError(
            f"envelope violated: v_bar = {v_bar!r} > envelope = {envelope!r}"
        )
    return JmaxEnvelope(sigma_max=sigma_max, j_max=float(j_max), envelope=float(envelope), v_bar=v_bar)


@dataclass(frozen=True)
class BauerFikeResult:
    samples: int
    kappa_v: float
    kappa_paper: float
    violations_kappa_v: int
    violations_kappa_paper: int


def bauer_fike_check(a_cl, delta_samples) -> BauerFikeResult:
    """Count violations of the eigenvalue perturbation containment.

    Checks rho(A_cl + Delta) <= rho(A_cl) + kappa(V) ||Delta|| for every
    sample (the literally-true eigenvector-matrix form) and also tallies how
    often the operator-condition-number variant holds.
    """
    a_cl = as_matrix(a_cl, "A_cl")
    spec = eigenvalues(a_cl)
    if not spec.diagonalizable:
        raise ValueError("Bauer-Fike check requires a diagonalizable matrix")
    kappa_v = spec.kappa_v
    kappa_paper = condition_number_spectral(a_cl)
    rho0 = spec.spectral_radius
    count = 0
    bad_v = 0
    bad_paper = 0
    for delta in delta_samples:
        delta = as_matrix(delta, "Delta")
        norm = spectral_norm(delta)
        rho = spectral_radius(a_cl + delta)
        if rho > rho0 + kappa_v * norm:
            bad_v += 1
        if rho > rho0 + kappa_paper * norm:
            bad_paper += 1
        count += 1
    return BauerFikeResult(
        samples=count,
        kappa_v=kappa_v,
        kappa_paper=kappa_paper,
        violations_kappa_v=bad_v,
        violations_kappa_paper=bad_paper,
    )
