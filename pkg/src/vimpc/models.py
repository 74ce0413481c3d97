"""Discrete-time control systems, stage costs and the LQR baseline.

All maps are vectorized over leading axes: ``dynamics(x, u)`` accepts arrays
of shape ``(..., n)`` and ``(..., m)`` and returns ``(..., n)``; ``Q_map(x)``
returns ``(...)``. Batched evaluation is what keeps the finite-difference
solvers downstream affordable.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from vimpc.errors import RiccatiDivergenceError, UsageError

log = logging.getLogger(__name__)

FD_STEP = 1e-6
R_GUARD = 1e-6


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise UsageError("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise UsageError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_width, dim: int) -> "Box":
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (dim,))
        return cls(-hw, hw.copy())

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def dist_sq(self, x):
        """Squared Euclidean distance to the box (zero inside)."""
        x = np.asarray(x, dtype=float)
        excess = np.maximum(self.lower - x, 0.0) + np.maximum(x - self.upper, 0.0)
        return np.sum(excess**2, axis=-1)

    def violation(self, x):
        """Largest coordinate-wise excursion outside the box (zero inside)."""
        x = np.asarray(x, dtype=float)
        excess = np.maximum(self.lower - x, 0.0) + np.maximum(x - self.upper, 0.0)
        return np.max(excess, axis=-1)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))

    def scaled(self, factor: float) -> "Box":
        center = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * factor
        return Box(center - half, center + half)

    def is_subset_of(self, other: "Box") -> bool:
        return bool(np.all(self.lower >= other.lower) and np.all(self.upper <= other.upper))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Box":
        return cls(data["lower"], data["upper"])


def quadratic_form(M: np.ndarray):
    """Return the batched map ``x -> x^T M x``."""
    M = np.asarray(M, dtype=float)

    def q(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, M, x)

    return q


@dataclass(frozen=True)
class SystemModel:
    """Constrained system ``x+ = f(x, u)`` with stage cost ``Q(x) + u^T R u``.

    ``Q_matrix`` is set when ``Q_map`` is the quadratic form of a matrix; the
    LQR baseline needs it.
    """

    n: int
    m: int
    dynamics: Callable
    Q_map: Callable
    R: np.ndarray
    state_box: Box
    input_box: Box
    Q_matrix: np.ndarray | None = None
    name: str = "system"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "R", R)
        if R.shape != (self.m, self.m):
            raise UsageError(f"R must be {self.m}x{self.m}, got {R.shape}")
        if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(R)) <= 0:
            raise UsageError("R must be symmetric positive definite")
        if self.state_box.dim != self.n or self.input_box.dim != self.m:
            raise UsageError("constraint boxes do not match the model dimensions")
        if not (np.all(self.state_box.lower < 0) and np.all(self.state_box.upper > 0)
                and np.all(self.input_box.lower < 0) and np.all(self.input_box.upper > 0)):
            raise UsageError("the origin must lie strictly inside the constraint set")
        if self.Q_matrix is not None:
            object.__setattr__(self, "Q_matrix", np.atleast_2d(np.asarray(self.Q_matrix, dtype=float)))

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.n:
            raise UsageError(f"state must have trailing dimension {self.n}, got shape {x.shape}")
        return x

    def check_input(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] != self.m:
            raise UsageError(f"input must have trailing dimension {self.m}, got shape {u.shape}")
        return u


def step(model: SystemModel, x, u) -> np.ndarray:
    """One step of the dynamics, ``f(x, u)``."""
    return model.dynamics(model.check_state(x), model.check_input(u))


def state_cost(model: SystemModel, x) -> np.ndarray:
    """``l(x, 0) = Q(x)``."""
    return model.Q_map(model.check_state(x))


def stage_cost(model: SystemModel, x, u) -> np.ndarray:
    x = model.check_state(x)
    u = model.check_input(u)
    return model.Q_map(x) + np.einsum("...i,ij,...j->...", u, model.R, u)


def linearize(model: SystemModel, x0, u0, h: float = FD_STEP):
    """Central finite-difference Jacobians ``(A, B)`` of ``f`` at ``(x0, u0)``."""
    x0 = model.check_state(x0).reshape(model.n)
    u0 = model.check_input(u0).reshape(model.m)
    ex = np.eye(model.n) * h
    eu = np.eye(model.m) * h
    A = (model.dynamics(x0 + ex, np.tile(u0, (model.n, 1)))
         - model.dynamics(x0 - ex, np.tile(u0, (model.n, 1)))).T / (2 * h)
    B = (model.dynamics(np.tile(x0, (model.m, 1)), u0 + eu)
         - model.dynamics(np.tile(x0, (model.m, 1)), u0 - eu)).T / (2 * h)
    return A, B


def riccati_map(P, A, B, Q, R):
    """One step of the discrete Riccati recursion."""
    BtPA = B.T @ P @ A
    return Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)


def solve_riccati(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000):
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Returns ``(P, K)`` with ``K = (R + B^T P B)^{-1} B^T P A`` so that
    ``u = -K x`` is the LQR law.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = Q.copy()
    for it in range(1, max_iter + 1):
        P_next = riccati_map(P, A, B, Q, R)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise RiccatiDivergenceError(it)
        change = np.linalg.norm(P_next - P)
        P = P_next
        if change <= tol * max(np.linalg.norm(P), 1e-300):
            break
    else:
        raise RiccatiDivergenceError(max_iter)
    # polish down to the rounding floor while the change keeps shrinking
    for _ in range(100):
        P_next = riccati_map(P, A, B, Q, R)
        P_next = 0.5 * (P_next + P_next.T)
        new_change = np.linalg.norm(P_next - P)
        if new_change >= change or new_change == 0:
            if new_change < change:
                P = P_next
            break
        P, change = P_next, new_change
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


@dataclass(frozen=True)
class LqrBaseline:
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    K: np.ndarray

    def policy(self, x):
        return -np.asarray(x) @ self.K.T

    @property
    def closed_loop_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A - self.B @ self.K))))


def lqr_baseline(model: SystemModel) -> LqrBaseline:
    """LQR design for the linearization of ``model`` at the origin."""
    if model.Q_matrix is None:
        raise UsageError("LQR baseline requires a quadratic state cost (Q_matrix)")
    A, B = linearize(model, np.zeros(model.n), np.zeros(model.m))
    P, K = solve_riccati(A, B, model.Q_matrix, model.R)
    return LqrBaseline(A, B, P, K)


# --- concrete models -------------------------------------------------------

def linear_model(A, B, Q, R, state_box: Box | None = None, input_box: Box | None = None,
                 name: str = "linear") -> SystemModel:
    """Linear system ``x+ = A x + B u`` with quadratic stage cost.

    Unspecified boxes default to a very wide box so that LQ oracles apply.
    """
    A, B, Q = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q))
    n, m = B.shape

    def dynamics(x, u):
        return x @ A.T + u @ B.T

    return SystemModel(
        n=n, m=m, dynamics=dynamics, Q_map=quadratic_form(Q), R=R,
        state_box=state_box or Box.symmetric(1e6, n),
        input_box=input_box or Box.symmetric(1e6, m),
        Q_matrix=Q, name=name,
        params={"A": A.tolist(), "B": B.tolist()},
    )


def _orbital_dynamics(x, u, dt: float, literal_r: bool):
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    if literal_r:
        r = np.sqrt(1.0 + x1**2 + x2**2)
    else:
        r = np.sqrt((1.0 + x1) ** 2 + x2**2)
    if np.any(r < R_GUARD):
        raise UsageError(f"orbital radius below {R_GUARD}; state is at the attracting body")
    g = 1.0 / r**3 - 1.0
    dx = np.stack(
        [
            x3,
            x4,
            2.0 * x4 - (1.0 + x1) * g + u[..., 0],
            -2.0 * x3 - x2 * g + u[..., 1],
        ],
        axis=-1,
    )
    return x + dt * dx


def orbital_rendezvous(dt: float = 0.05, q_diag=(50.0, 50.0, 50.0, 50.0), r_diag=(1.0, 1.0),
                       state_bound: float = 0.5, input_bound: float = 2.0,
                       literal_r: bool = False) -> SystemModel:
    """Planar rendezvous in normalized orbital coordinates, explicit Euler.

    State ``(X, Y, X_t, Y_t)``: position and velocity relative to the target
    orbit. ``literal_r`` selects ``r = sqrt(1 + X^2 + Y^2)`` instead of the
    distance to the attracting body ``r = sqrt((1 + X)^2 + Y^2)``.
    """
    Q = np.diag(np.asarray(q_diag, dtype=float))
    log.info("orbital model: r = %s", "sqrt(1 + X^2 + Y^2)" if literal_r else "sqrt((1 + X)^2 + Y^2)")
    return SystemModel(
        n=4, m=2,
        dynamics=functools.partial(_orbital_dynamics, dt=float(dt), literal_r=bool(literal_r)),
        Q_map=quadratic_form(Q), R=np.diag(np.asarray(r_diag, dtype=float)),
        state_box=Box.symmetric(state_bound, 4), input_box=Box.symmetric(input_bound, 2),
        Q_matrix=Q, name="orbital_rendezvous",
        params={"dt": float(dt), "literal_r": bool(literal_r)},
    )


def double_integrator(dt: float = 0.1, q: float = 1.0, r: float = 1.0,
                      state_bound: float = 10.0, input_bound: float = 1.0) -> SystemModel:
    """Euler-discretized double integrator, ``n = 2``, ``m = 1``."""
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    return linear_model(A, B, q * np.eye(2), [[r]], Box.symmetric(state_bound, 2),
                        Box.symmetric(input_bound, 1), name="double_integrator")
