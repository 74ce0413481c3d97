"""Approximate value iteration on a fixed sample design.

Each iteration computes Bellman targets ``min_u l(x, u) + V_i(f(x, u))`` at
the training states, fits the next iterate by least squares and measures,
on the evaluation states, the fit residual and the change between iterates
relative to ``max(l(x, 0), eta)``. The run stops once the largest relative
change drops below ``target_c_delta``.

The returned approximator is the iterate ``V_i`` whose Bellman update was
measured last, so that the stopping test and the residual bound both refer
to it and its greedy policy.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from vimpc.approximator import MonomialBasis, ValueApproximator, fit_weights
from vimpc.errors import InnerMinimizationError, UsageError
from vimpc.models import Box, SystemModel, stage_cost, state_cost
from vimpc.optim import projected_gradient

log = logging.getLogger(__name__)


class OutsideDomainWarning(UserWarning):
    """A Bellman target was requested outside the approximator's domain."""


@dataclass(frozen=True)
class InnerMinConfig:
    """Multistart projected descent for the minimization over inputs.

    Starts are the origin plus ``n_starts - 1`` points drawn uniformly from
    the input box with a fixed seed, identical for every state.
    """

    n_starts: int = 5
    max_inner_iterations: int = 200
    grad_tol: float = 1e-9
    seed: int = 0
    input_box: Box | None = None

    def __post_init__(self):
        if self.n_starts < 1:
            raise UsageError("n_starts must be at least 1")

    def box(self, model: SystemModel) -> Box:
        return self.input_box if self.input_box is not None else model.input_box

    def starts(self, model: SystemModel) -> np.ndarray:
        box = self.box(model)
        origin = box.project(np.zeros((1, model.m)))
        rng = np.random.default_rng(self.seed)
        return np.vstack([origin, box.sample(rng, self.n_starts - 1)])


@dataclass(frozen=True)
class ViConfig:
    domain: Box | None = None
    n_train: int = 80
    n_eval: int = 1000
    max_iterations: int = 500
    target_c_delta: float = 0.01
    origin_guard: float = 1e-8
    rng_seed: int = 0
    degrees: tuple[int, ...] = (2, 3)
    resample_each_iteration: bool = False

    def resolved_domain(self, model: SystemModel) -> Box:
        return self.domain if self.domain is not None else Box.symmetric(0.12, model.n)

    def validate(self, model: SystemModel, basis: MonomialBasis):
        omega = self.resolved_domain(model)
        if omega.dim != model.n:
            raise UsageError("domain dimension does not match the model")
        if not omega.is_subset_of(model.state_box):
            raise UsageError("domain must be contained in the state constraint box")
        if self.origin_guard <= 0:
            raise UsageError("origin_guard must be positive")
        if self.n_train < basis.size:
            raise UsageError(
                f"n_train ({self.n_train}) must be at least the feature count ({basis.size})"
            )
        if self.n_eval < 1 or self.max_iterations < 1:
            raise UsageError("n_eval and max_iterations must be positive")


def _check_in_domain(approx: ValueApproximator, X):
    if approx.domain is not None and not np.all(approx.domain.contains(X, tol=1e-12)):
        warnings.warn("Bellman target requested outside the approximation domain",
                      OutsideDomainWarning, stacklevel=3)


def bellman_targets(approx: ValueApproximator, model: SystemModel, X, inner: InnerMinConfig):
    """Batched ``min_{u in U} l(x, u) + V(f(x, u))`` for the rows of ``X``.

    Returns ``(values, u_star)`` with shapes ``(k,)`` and ``(k, m)``.
    """
    X = model.check_state(X)
    if approx.n != model.n:
        raise UsageError("approximator dimension does not match the model")
    X = np.atleast_2d(X)
    _check_in_domain(approx, X)
    box = inner.box(model)
    starts = inner.starts(model)
    S = starts.shape[0]
    k = X.shape[0]

    def objective(U, rows):
        Xr = X[rows // S]
        return stage_cost(model, Xr, U) + approx(model.dynamics(Xr, U))

    res = projected_gradient(
        objective, np.tile(starts, (k, 1)), box.lower, box.upper,
        tol=inner.grad_tol, max_iter=inner.max_inner_iterations,
    )
    F = res.f.reshape(k, S)
    ok = res.converged.reshape(k, S)
    Z = res.z.reshape(k, S, model.m)
    failed = ~np.any(ok, axis=1)
    if np.any(failed):
        i = int(np.flatnonzero(failed)[0])
        j = int(np.argmin(F[i]))
        raise InnerMinimizationError(
            f"inner minimization failed at state {X[i].tolist()}", Z[i, j].copy(), float(F[i, j])
        )
    # ties go to the earliest start (the origin first)
    best = np.argmin(np.where(ok, F, np.inf), axis=1)
    return F[np.arange(k), best], Z[np.arange(k), best]


def bellman_target(approx: ValueApproximator, model: SystemModel, x, inner: InnerMinConfig):
    """Single-state Bellman target ``(value, u_star)``."""
    values, U = bellman_targets(approx, model, np.reshape(x, (1, -1)), inner)
    return float(values[0]), U[0]


def extract_policy(approx: ValueApproximator, model: SystemModel, x, inner: InnerMinConfig):
    """Greedy input ``argmin_u l(x, u) + V(f(x, u))``; batched over leading axis."""
    x = np.asarray(x, dtype=float)
    _, U = bellman_targets(approx, model, np.atleast_2d(x), inner)
    return U[0] if x.ndim == 1 else U


@dataclass
class ViResult:
    approximator: ValueApproximator
    next_approximator: ValueApproximator
    iterations: int
    converged: bool
    c_e_measured: float
    c_delta_measured: float
    history: list = field(default_factory=list)
    train_states: np.ndarray | None = None
    eval_states: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "approximator": self.approximator.to_dict(),
            "next_approximator": self.next_approximator.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "c_e_measured": self.c_e_measured,
            "c_delta_measured": self.c_delta_measured,
            "history": [[float(a), float(b)] for a, b in self.history],
            "train_states": np.asarray(self.train_states).tolist(),
            "eval_states": np.asarray(self.eval_states).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ViResult":
        return cls(
            approximator=ValueApproximator.from_dict(data["approximator"]),
            next_approximator=ValueApproximator.from_dict(data["next_approximator"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            c_e_measured=float(data["c_e_measured"]),
            c_delta_measured=float(data["c_delta_measured"]),
            history=[tuple(h) for h in data["history"]],
            train_states=np.asarray(data["train_states"], dtype=float),
            eval_states=np.asarray(data["eval_states"], dtype=float),
        )

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "c_e_rel_max", "c_delta_rel_max"])
        for i, (ce, cd) in enumerate(self.history):
            writer.writerow([i, repr(float(ce)), repr(float(cd))])
        return buf.getvalue()


def _relative(model: SystemModel, X, eta: float):
    return np.maximum(state_cost(model, X), eta)


def vi_run(model: SystemModel, cfg: ViConfig, inner: InnerMinConfig | None = None,
           V0: ValueApproximator | None = None) -> ViResult:
    inner = inner or InnerMinConfig()
    omega = cfg.resolved_domain(model)
    if V0 is None:
        V0 = ValueApproximator.zero(MonomialBasis(model.n, cfg.degrees), omega)
    elif V0.n != model.n:
        raise UsageError("initial approximator dimension does not match the model")
    basis = V0.basis
    cfg.validate(model, basis)
    V = ValueApproximator(basis, V0.weights, omega)

    rng = np.random.default_rng(cfg.rng_seed)
    train = omega.sample(rng, cfg.n_train)
    evals = omega.sample(rng, cfg.n_eval)
    norm_train = _relative(model, train, cfg.origin_guard)
    norm_eval = _relative(model, evals, cfg.origin_guard)

    history = []
    c_e_running = 0.0
    converged = False
    V_next = V
    for it in range(cfg.max_iterations):
        if cfg.resample_each_iteration and it > 0:
            train = omega.sample(rng, cfg.n_train)
            norm_train = _relative(model, train, cfg.origin_guard)
        targets, _ = bellman_targets(V, model, np.vstack([train, evals]), inner)
        t_train, t_eval = targets[: len(train)], targets[len(train):]
        V_next = V.with_weights(fit_weights(basis, train, t_train))

        resid = max(
            np.max(np.abs(V_next(train) - t_train) / norm_train),
            np.max(np.abs(V_next(evals) - t_eval) / norm_eval),
        )
        change = float(np.max(np.abs(V_next(evals) - V(evals)) / norm_eval))
        c_e_running = max(c_e_running, float(resid))
        history.append((float(resid), change))
        log.debug("VI iteration %d: c_e=%.3e c_delta=%.3e", it, resid, change)
        if change <= cfg.target_c_delta:
            converged = True
            break
        V = V_next

    if not converged:
        log.warning("value iteration hit max_iterations=%d without converging", cfg.max_iterations)
    return ViResult(
        approximator=V,
        next_approximator=V_next,
        iterations=len(history),
        converged=converged,
        c_e_measured=c_e_running,
        c_delta_measured=history[-1][1],
        history=history,
        train_states=train,
        eval_states=evals,
    )


@dataclass
class DecreaseReport:
    hypothesis_holds: bool
    n_samples: int
    violations: list
    worst_margin: float

    @property
    def passed(self) -> bool:
        return self.hypothesis_holds and not self.violations


def check_decrease(approx: ValueApproximator, model: SystemModel, samples, c_e: float,
                   c_delta: float, inner: InnerMinConfig | None = None,
                   policy: ValueApproximator | None = None) -> DecreaseReport:
    """Check ``V(f(x, h(x))) - V(x) <= (c_e + c_delta - 1) l(x, 0)`` at each sample.

    ``h`` is the greedy policy of ``approx`` unless ``policy`` names another
    approximator to take it from. A margin ``rhs + slack - lhs`` below zero
    is a violation; the slack is ``1e-9 (1 + |V(x)|)``.
    """
    inner = inner or InnerMinConfig()
    X = np.atleast_2d(model.check_state(samples))
    U = extract_policy(policy if policy is not None else approx, model, X, inner)
    Vx = approx(X)
    lhs = approx(model.dynamics(X, U)) - Vx
    rhs = (c_e + c_delta - 1.0) * state_cost(model, X)
    margin = rhs + 1e-9 * (1.0 + np.abs(Vx)) - lhs
    bad = np.flatnonzero(margin < 0)
    return DecreaseReport(
        hypothesis_holds=bool(c_e + c_delta < 1.0),
        n_samples=X.shape[0],
        violations=[int(i) for i in bad],
        worst_margin=float(np.min(margin)),
    )


def _face_grid(omega: Box, density: int):
    axes = [np.linspace(lo, hi, density) for lo, hi in zip(omega.lower, omega.upper)]
    pts = []
    for i in range(omega.dim):
        others = [axes[j] for j in range(omega.dim) if j != i]
        if others:
            mesh = np.array(np.meshgrid(*others, indexing="ij")).reshape(omega.dim - 1, -1).T
        else:
            mesh = np.empty((1, 0))
        for bound in (omega.lower[i], omega.upper[i]):
            face = np.insert(mesh, i, bound, axis=1)
            pts.append(face)
    return np.vstack(pts)


def estimate_region_radius(approx: ValueApproximator, omega: Box, grid_density: int = 11) -> float:
    """Conservative level ``r`` with ``{V <= r}`` inside ``omega``.

    Returns the minimum of ``V`` over a grid on the faces of ``omega`` after
    checking that ``V`` is positive on a full grid of ``omega`` (origin
    excluded).
    """
    if grid_density < 2:
        raise UsageError("grid_density must be at least 2")
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in zip(omega.lower, omega.upper)]
    full = np.array(np.meshgrid(*axes, indexing="ij")).reshape(omega.dim, -1).T
    full = full[np.any(full != 0.0, axis=1)]
    values = approx(full)
    if np.any(values <= 0):
        i = int(np.argmin(values))
        raise UsageError(f"approximator not positive on Omega (V={values[i]:.3e} at {full[i].tolist()})")
    return float(np.min(approx(_face_grid(omega, grid_density))))
