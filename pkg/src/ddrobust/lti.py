"""Plant definition, trajectory simulation and training-data collection.

A training record holds the stacked input sequences ``U`` (mT x N), the
selected state samples ``X`` (p x N) and the initial states of each
experiment. ``X`` stores the states x(1..T); x(0) is kept separately in
``x0s`` so that a full-trajectory record has exactly p = n*T rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .linalg import as_matrix, vec, vec_inverse

InputLaw = Callable[[np.random.Generator, int, int], np.ndarray]


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time plant x(t+1) = A x(t) + B u(t)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a, "A")
        b = as_matrix(self.b, "B")
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise ValueError(f"B has {b.shape[0]} rows but A is {a.shape[0]}x{a.shape[1]}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class Selector:
    """Which state samples enter X: the whole trajectory, the final state,
    or an arbitrary p x nT selection matrix."""

    kind: str
    c: np.ndarray | None = None

    FULL = "full_trajectory"
    FINAL = "final_state"
    CUSTOM = "custom"

    @classmethod
    def full_trajectory(cls) -> "Selector":
        return cls(kind=cls.FULL)

    @classmethod
    def final_state(cls) -> "Selector":
        return cls(kind=cls.FINAL)

    @classmethod
    def custom(cls, c) -> "Selector":
        return cls(kind=cls.CUSTOM, c=as_matrix(c, "C"))

    def output_dim(self, n: int, t: int) -> int:
        if self.kind == self.FULL:
            return n * t
        if self.kind == self.FINAL:
            return n
        if self.c.shape[1] != n * t:
            raise ValueError(
                f"selector C has {self.c.shape[1]} columns, expected n*T = {n * t}"
            )
        return self.c.shape[0]

    def apply(self, stacked: np.ndarray, n: int, t: int) -> np.ndarray:
        """Map the stacked trajectory [x(1); ...; x(T)] to the measured samples."""
        if stacked.size != n * t:
            raise ValueError(f"stacked trajectory has length {stacked.size}, expected {n * t}")
        if self.kind == self.FULL:
            return stacked
        if self.kind == self.FINAL:
            return stacked[-n:]
        self.output_dim(n, t)
        return self.c @ stacked

    def to_json(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.c is not None:
            doc["c"] = self.c.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Selector":
        kind = doc["kind"]
        if kind == cls.CUSTOM:
            return cls.custom(np.asarray(doc["c"], dtype=float))
        if kind not in (cls.FULL, cls.FINAL):
            raise ValueError(f"unknown selector kind {kind!r}")
        return cls(kind=kind)


@dataclass(frozen=True)
class TrainingData:
    """Record of N control experiments of length T.

    ``u`` stacks each experiment's inputs column-wise (u(0..T-1), length mT);
    ``x`` holds the selected state samples; ``x0s`` the initial states.
    """

    u: np.ndarray
    x: np.ndarray
    x0s: np.ndarray
    t: int
    n: int
    m: int
    selector: Selector
    seed: int | None = None

    def __post_init__(self):
        u = as_matrix(self.u, "U")
        x = as_matrix(self.x, "X")
        x0s = as_matrix(self.x0s, "x0s")
        if u.shape[0] != self.m * self.t:
            raise ValueError(f"U has {u.shape[0]} rows, expected m*T = {self.m * self.t}")
        if u.shape[1] != x.shape[1] or x0s.shape[1] != x.shape[1]:
            raise ValueError("U, X and x0s must have the same number of columns")
        if x0s.shape[0] != self.n:
            raise ValueError(f"x0s has {x0s.shape[0]} rows, expected n = {self.n}")
        if x.shape[0] != self.selector.output_dim(self.n, self.t):
            raise ValueError(
                f"X has {x.shape[0]} rows, selector expects {self.selector.output_dim(self.n, self.t)}"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x0s", x0s)

    @property
    def n_experiments(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[0]

    @property
    def x_vec(self) -> np.ndarray:
        """vec(X), the perturbation coordinate system (length p*N)."""
        return vec(self.x)

    def with_x(self, new_x: np.ndarray) -> "TrainingData":
        if new_x.shape != self.x.shape:
            raise ValueError(f"replacement X must have shape {self.x.shape}")
        return replace(self, x=new_x)

    def with_x_vec(self, v: np.ndarray) -> "TrainingData":
        return self.with_x(vec_inverse(v, self.p, self.n_experiments))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "t": self.t,
            "n_experiments": self.n_experiments,
            "selector": self.selector.to_json(),
            "u": self.u.tolist(),
            "x": self.x.tolist(),
            "x0s": self.x0s.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrainingData":
        return cls(
            u=np.asarray(doc["u"], dtype=float),
            x=np.asarray(doc["x"], dtype=float),
            x0s=np.asarray(doc["x0s"], dtype=float),
            t=int(doc["t"]),
            n=int(doc["n"]),
            m=int(doc["m"]),
            selector=Selector.from_json(doc["selector"]),
            seed=doc.get("seed"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainingData":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def simulate(sys: LtiSystem, x0, u_seq) -> np.ndarray:
    """Roll out x(t+1) = A x(t) + B u(t) and return [x(1) ... x(T)] as n x T."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != sys.n:
        raise ValueError(f"x0 has length {x0.size}, expected {sys.n}")
    u = np.asarray(u_seq, dtype=float)
    if u.ndim == 1:
        u = u.reshape(1, -1) if sys.m == 1 else u.reshape(-1, 1)
    if u.shape[0] != sys.m:
        # accept a T x m list of input vectors as well
        if u.shape[1] == sys.m:
            u = u.T
        else:
            raise ValueError(f"input sequence has shape {u.shape}, expected {sys.m} x T")
    t_steps = u.shape[1]
    states = np.empty((sys.n, t_steps))
    x = x0
    for k in range(t_steps):
        x = sys.a @ x + sys.b @ u[:, k]
        states[:, k] = x
    return states


def gaussian_inputs(rng: np.random.Generator, m: int, t: int) -> np.ndarray:
    """Default input law: i.i.d. standard normal entries."""
    return rng.standard_normal((m, t))


def collect(
    sys: LtiSystem,
    n_experiments: int,
    t_steps: int,
    selector: Selector | None = None,
    input_law: InputLaw = gaussian_inputs,
    seed: int | None = 0,
    x0: np.ndarray | None = None,
) -> TrainingData:
    """Run ``n_experiments`` experiments of length ``t_steps`` and record them.

    Inputs are drawn from ``input_law`` (standard normal by default) with a
    generator seeded by ``seed``, so the record is reproducible bit for bit.
    Initial states default to zero.
    """
    if n_experiments < 1 or t_steps < 1:
        raise ValueError("collect requires N >= 1 and T >= 1")
    selector = selector or Selector.full_trajectory()
    rng = np.random.default_rng(seed)
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).ravel()

    p = selector.output_dim(sys.n, t_steps)
    u_cols = np.empty((sys.m * t_steps, n_experiments))
    x_cols = np.empty((p, n_experiments))
    x0_cols = np.empty((sys.n, n_experiments))
    for i in range(n_experiments):
        u = input_law(rng, sys.m, t_steps)
        states = simulate(sys, x0, u)
        u_cols[:, i] = u.flatten(order="F")
        x_cols[:, i] = selector.apply(states.flatten(order="F"), sys.n, t_steps)
        x0_cols[:, i] = x0
    return TrainingData(
        u=u_cols,
        x=x_cols,
        x0s=x0_cols,
        t=t_steps,
        n=sys.n,
        m=sys.m,
        selector=selector,
        seed=seed,
    )


def snapshot_matrices(data: TrainingData) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a single full-trajectory record into (X0, X1, U0) snapshots.

    X0 = [x0, x(1..T-1)], X1 = [x(1..T)], U0 = [u(0..T-1)]; on noiseless data
    these satisfy X1 = A X0 + B U0 exactly.
    """
    if data.selector.kind != Selector.FULL:
        raise ValueError("snapshot matrices require a full-trajectory selector")
    if data.n_experiments != 1:
        raise ValueError("snapshot matrices require a single experiment (N = 1)")
    n, t = data.n, data.t
    states = data.x[:, 0].reshape((n, t), order="F")
    x1 = states
    x0 = np.column_stack([data.x0s[:, 0], states[:, : t - 1]])
    u0 = data.u[:, 0].reshape((data.m, t), order="F")
    return x0, x1, u0


def vehicle_model(ts: float = 0.1) -> LtiSystem:
    """Planar vehicle: two decoupled position/velocity chains sampled at ts."""
    if ts <= 0:
        raise ValueError("sampling time must be positive")
    a = np.array(
        [
            [1.0, ts, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, ts],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    b = np.array(
        [
            [0.0, 0.0],
            [ts, 0.0],
            [0.0, 0.0],
            [0.0, ts],
        ]
    )
    return LtiSystem(a=a, b=b)
