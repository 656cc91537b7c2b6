"""Finite-difference sensitivity of a controller map and the first-order
closed-loop model built from it.

The Jacobian is taken with respect to vec(X) and only on the perturbation
support: column i approximates d vec(K) / d vec(X)_i by central differences.
Attaching an input matrix B (ground truth or identified; the choice is
recorded) turns the columns into the n x n products B J_i that drive every
bound downstream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .lti import LtiSystem, TrainingData
from .linalg import as_matrix, spectral_norm, vec_inverse

# Optimal central-difference step scale for O(h^2) schemes.
_FD_STEP_SCALE = float(np.cbrt(np.finfo(float).eps))

B_SOURCE_TRUE = "true"
B_SOURCE_IDENTIFIED = "identified"


@dataclass(frozen=True)
class PerturbationModel:
    """Support of the data perturbation and the per-entry noise levels.

    ``support`` holds 0-based indices into vec(X); every supported entry is
    perturbed independently with standard deviation ``sigmas[j]``.
    """

    support: np.ndarray
    sigmas: np.ndarray
    dim: int | None = None

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int).ravel()
        sigmas = np.asarray(self.sigmas, dtype=float).ravel()
        if support.size == 0:
            raise ValueError("perturbation support must be nonempty")
        if sigmas.size == 1 and support.size > 1:
            sigmas = np.full(support.size, sigmas[0])
        if support.size != sigmas.size:
            raise ValueError("support and sigmas must have matching lengths")
        if len(np.unique(support)) != support.size:
            raise ValueError("support indices must be unique")
        if np.any(support < 0):
            raise ValueError("support indices must be nonnegative")
        if self.dim is not None and np.any(support >= self.dim):
            raise ValueError(f"support indices must lie below dim = {self.dim}")
        if np.any(sigmas <= 0.0) or not np.all(np.isfinite(sigmas)):
            raise ValueError("all sigmas must be positive and finite")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def size(self) -> int:
        return self.support.size

    def scaled(self, factor: float) -> "PerturbationModel":
        return replace(self, sigmas=self.sigmas * factor)


@dataclass(frozen=True)
class JacobianBundle:
    """FD columns of the map on the support, plus cached B J_i products.

    ``columns[:, j]`` is the length-(m*n) derivative of vec(K) with respect
    to vec(X) at support index ``support[j]``. ``bj`` is filled by
    :meth:`with_b` and holds the stacked n x n products.
    """

    support: np.ndarray
    columns: np.ndarray
    fd_steps: np.ndarray
    m: int
    n: int
    failures: dict
    bj: np.ndarray | None = None
    b_source: str | None = None

    @property
    def size(self) -> int:
        return self.support.size

    def j_matrix(self, j: int) -> np.ndarray:
        """The m x n sensitivity matrix at support position j."""
        return vec_inverse(self.columns[:, j], self.m, self.n)

    def j_matrices(self) -> np.ndarray:
        return np.stack([self.j_matrix(j) for j in range(self.size)])

    def with_b(self, b, source: str) -> "JacobianBundle":
        """Attach an input matrix and cache the B J_i products."""
        if source not in (B_SOURCE_TRUE, B_SOURCE_IDENTIFIED):
            raise ValueError(f"unknown B source {source!r}")
        if self.failures:
            raise ValueError(
                f"cannot attach B: {len(self.failures)} Jacobian columns failed "
                f"(indices {sorted(self.failures)})"
            )
        b = as_matrix(b, "B")
        if b.shape != (self.n, self.m):
            raise ValueError(f"B must be {self.n}x{self.m}, got {b.shape}")
        bj = np.stack([b @ self.j_matrix(j) for j in range(self.size)])
        return replace(self, bj=bj, b_source=source)

    def to_json(self) -> dict:
        return {
            "support": self.support.tolist(),
            "columns": self.columns.tolist(),
            "fd_steps": self.fd_steps.tolist(),
            "m": self.m,
            "n": self.n,
            "failures": {str(k): v for k, v in self.failures.items()},
            "b_source": self.b_source,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "JacobianBundle":
        return cls(
            support=np.asarray(doc["support"], dtype=int),
            columns=np.asarray(doc["columns"], dtype=float),
            fd_steps=np.asarray(doc["fd_steps"], dtype=float),
            m=int(doc["m"]),
            n=int(doc["n"]),
            failures={int(k): v for k, v in doc.get("failures", {}).items()},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "JacobianBundle":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def fd_jacobian(cmap, data: TrainingData, support, step: float | None = None) -> JacobianBundle:
    """Central-difference Jacobian columns of the map on the given support.

    The step follows h = cbrt(eps) * max(1, |x_i|) per entry unless a fixed
    ``step`` is forced (step-halving studies). A map failure at a probe point
    is recorded per column instead of aborting the whole bundle.
    """
    support = np.asarray(support, dtype=int).ravel()
    xv = data.x_vec
    if np.any(support < 0) or np.any(support >= xv.size):
        raise ValueError("support indices out of range for vec(X)")
    k_nom = cmap.evaluate(data)
    m, n = k_nom.shape
    columns = np.zeros((m * n, support.size))
    steps = np.empty(support.size)
    failures: dict = {}
    for j, idx in enumerate(support):
        h = step if step is not None else _FD_STEP_SCALE * max(1.0, abs(xv[idx]))
        steps[j] = h
        probe = xv.copy()
        try:
            probe[idx] = xv[idx] + h
            k_plus = cmap.evaluate(data.with_x_vec(probe))
            probe[idx] = xv[idx] - h
            k_minus = cmap.evaluate(data.with_x_vec(probe))
        except Exception as exc:  # per-column failure record, bundle survives
            failures[int(idx)] = f"{type(exc).__name__}: {exc}"
            columns[:, j] = np.nan
            continue
        columns[:, j] = (k_plus - k_minus).flatten(order="F") / (2.0 * h)
    return JacobianBundle(
        support=support,
        columns=columns,
        fd_steps=steps,
        m=m,
        n=n,
        failures=failures,
    )


def first_order_acl(a_cl, bundle: JacobianBundle, z) -> np.ndarray:
    """Linearized perturbed closed loop A_cl + sum_i z_i B J_i."""
    a_cl = as_matrix(a_cl, "A_cl")
    if bundle.bj is None:
        raise ValueError("bundle has no B attached; call with_b first")
    z = np.asarray(z, dtype=float).ravel()
    if z.size != bundle.size:
        raise ValueError(f"z has length {z.size}, expected {bundle.size}")
    return a_cl + np.tensordot(z, bundle.bj, axes=1)


def expected_vec_norm(sigmas) -> float:
    """E ||vec(Z)|| for independent zero-mean Gaussians with these sigmas.

    Equal sigmas admit the chi-distribution mean in closed form; mixed
    sigmas fall back on a large fixed-seed sample.
    """
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    k = sigmas.size
    if np.all(sigmas == sigmas[0]):
        log_mean = 0.5 * math.log(2.0) + math.lgamma((k + 1) / 2.0) - math.lgamma(k / 2.0)
        return float(sigmas[0] * math.exp(log_mean))
    rng = np.random.default_rng(1234)
    total = 0.0
    draws = 200_000
    chunk = 20_000
    done = 0
    while done < draws:
        take = min(chunk, draws - done)
        g = rng.standard_normal((take, k)) * sigmas
        total += float(np.sum(np.sqrt(np.sum(g * g, axis=1))))
        done += take
    return total / draws


@dataclass(frozen=True)
class ResidualStat:
    """Normalized first-order remainder at one perturbation scale."""

    scale: float
    mean_residual: float
    trials: int
    skipped: int


def lemma1_residual(
    cmap,
    sys: LtiSystem,
    data: TrainingData,
    model: PerturbationModel,
    sigma_scales,
    trials: int,
    seed: int = 0,
) -> list[ResidualStat]:
    """Compare the exact perturbed closed loop against its linearization.

    For each scale s the statistic is
    mean ||A~_exact - A~_first_order|| / sqrt(E ||vec Z||) over ``trials``
    draws of Z with sigmas scaled by s. Map failures are skipped and counted.
    """
    k_nom = cmap.evaluate(data)
    a_cl = sys.a + sys.b @ k_nom
    bundle = fd_jacobian(cmap, data, model.support).with_b(sys.b, B_SOURCE_TRUE)
    xv = data.x_vec
    stats = []
    for s_idx, scale in enumerate(sigma_scales):
        scaled_sigmas = model.sigmas * scale
        norm_scale = math.sqrt(expected_vec_norm(scaled_sigmas)) if scale > 0 else 1.0
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(s_idx,)))
        residuals = []
        skipped = 0
        for _ in range(trials):
            z = rng.standard_normal(model.size) * scaled_sigmas
            probe = xv.copy()
            probe[model.support] += z
            try:
                k_pert = cmap.evaluate(data.with_x_vec(probe))
            except Exception:
                skipped += 1
                continue
            exact = sys.a + sys.b @ k_pert
            approx = first_order_acl(a_cl, bundle, z)
            residuals.append(spectral_norm(exact - approx) / norm_scale if scale > 0 else 0.0)
        mean_res = float(np.mean(residuals)) if residuals else math.nan
        stats.append(
            ResidualStat(
                scale=float(scale),
                mean_residual=mean_res,
                trials=trials,
                skipped=skipped,
            )
        )
    return stats
