"""Finite-horizon optimal control by single shooting.

Decision variables are the inputs only; states come from rolling out the
dynamics. Input bounds are enforced by projection, state bounds by the
penalty ``mu * sum_j dist(x_{j+1}, X)^2``, and feasibility is checked after
the fact against the true boxes.

The objective gradient is assembled backward along the trajectory from
central-difference Jacobians of each step, so one gradient costs
``O(N (n + m))`` dynamics calls instead of ``O(N^2 m)`` for differencing
the whole rollout.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from vimpc.approximator import ValueApproximator
from vimpc.errors import RolloutDivergedError, UsageError
from vimpc.models import SystemModel, stage_cost, state_cost
from vimpc.optim import FD_STEP, projected_gradient
from vimpc.value_iteration import InnerMinConfig, OutsideDomainWarning, extract_policy


@dataclass(frozen=True)
class QuadraticTerminal:
    """Terminal cost ``x^T P x`` (LQR baseline); ``K`` gives its shift input ``-K x``."""

    P: np.ndarray
    K: np.ndarray | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, np.asarray(self.P), x)


@dataclass(frozen=True)
class OcpProblem:
    model: SystemModel
    N: int
    x0: np.ndarray
    terminal: ValueApproximator | QuadraticTerminal | None = None
    mu: float = 1e4
    tol: float = 1e-7
    max_iter: int = 2000

    def __post_init__(self):
        if self.N < 1:
            raise UsageError("horizon N must be at least 1")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.size != self.model.n or not np.all(np.isfinite(x0)):
            raise UsageError("x0 must be a finite state of the model dimension")
        object.__setattr__(self, "x0", x0)
        if isinstance(self.terminal, ValueApproximator) and self.terminal.n != self.model.n:
            raise UsageError("terminal approximator dimension does not match the model")


@dataclass
class OcpSolution:
    u_traj: np.ndarray
    x_traj: np.ndarray
    value: float
    objective: float
    feasible: bool
    iterations: int
    grad_norm: float
    converged: bool

    def stage_costs(self, model: SystemModel) -> np.ndarray:
        return stage_cost(model, self.x_traj[:-1], self.u_traj)

    def to_csv(self, model: SystemModel) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["j"] + [f"x{i + 1}" for i in range(model.n)]
                        + [f"u{i + 1}" for i in range(model.m)] + ["stage_cost"])
        costs = self.stage_costs(model)
        for j in range(self.x_traj.shape[0]):
            u = self.u_traj[j] if j < len(self.u_traj) else [""] * model.m
            c = repr(float(costs[j])) if j < len(costs) else ""
            writer.writerow([j] + [repr(float(v)) for v in self.x_traj[j]]
                            + [repr(float(v)) if v != "" else "" for v in u] + [c])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"V_N": self.value, "feasible": self.feasible, "iterations": self.iterations}


def rollout(model: SystemModel, x0, U):
    """States ``(..., N + 1, n)`` from inputs ``(..., N, m)``."""
    U = np.asarray(U, dtype=float)
    batch = U.shape[:-2]
    N = U.shape[-2]
    X = np.empty(batch + (N + 1, model.n))
    X[..., 0, :] = x0
    for j in range(N):
        X[..., j + 1, :] = model.dynamics(X[..., j, :], U[..., j, :])
    return X


def _costs(problem: OcpProblem, U):
    """``(true objective, penalty)`` for a batch of input sequences ``(..., N, m)``."""
    model = problem.model
    X = rollout(model, problem.x0, U)
    value = np.sum(stage_cost(model, X[..., :-1, :], U), axis=-1)
    if problem.terminal is not None:
        value = value + problem.terminal(X[..., -1, :])
    penalty = problem.mu * np.sum(model.state_box.dist_sq(X[..., 1:, :]), axis=-1)
    return value, penalty, X


def _fd_partials(fun, X, extra, h):
    """Central differences of ``fun(X + h e_i, *extra)`` over the last axis of ``X``."""
    cols = []
    for i in range(X.shape[-1]):
        E = np.zeros(X.shape[-1])
        E[i] = h
        cols.append((fun(X + E, *extra) - fun(X - E, *extra)) / (2 * h))
    return np.stack(cols, axis=-1)


def objective_gradient(problem: OcpProblem, U, h: float = FD_STEP):
    """Gradient of objective plus penalty for a batch ``(..., N, m)`` of input sequences."""
    model = problem.model
    U = np.asarray(U, dtype=float)
    X = rollout(model, problem.x0, U)
    Xs = X[..., :-1, :]
    A = _fd_partials(model.dynamics, Xs, (U,), h)  # (..., N, n, n): d f_k / d x_i
    Bu = _fd_partials(lambda V: model.dynamics(Xs, V), U, (), h)  # (..., N, n, m)
    lx = _fd_partials(lambda Z: state_cost(model, Z), X, (), h)  # (..., N + 1, n)
    lu = 2.0 * U @ np.asarray(model.R)
    box = model.state_box
    pen = 2.0 * problem.mu * (X - box.project(X))

    lam = pen[..., -1, :]
    if problem.terminal is not None:
        lam = lam + _fd_partials(problem.terminal, X[..., -1, :], (), h)
    G = np.empty_like(U)
    for j in range(problem.N - 1, -1, -1):
        G[..., j, :] = lu[..., j, :] + np.einsum("...km,...k->...m", Bu[..., j, :, :], lam)
        lam = lx[..., j, :] + np.einsum("...ki,...k->...i", A[..., j, :, :], lam)
        if j > 0:
            lam = lam + pen[..., j, :]
    return G


def objective(problem: OcpProblem, U) -> float:
    value, penalty, _ = _costs(problem, np.asarray(U, dtype=float))
    return float(value + penalty)


def solve_ocp(problem: OcpProblem, warm_start=None) -> OcpSolution:
    model = problem.model
    N, m = problem.N, model.m
    box = model.input_box
    if warm_start is None:
        U0 = np.zeros((N, m))
    else:
        U0 = np.asarray(warm_start, dtype=float)
        if U0.shape != (N, m):
            raise UsageError(f"warm start must have shape {(N, m)}, got {U0.shape}")
    U0 = box.project(U0)

    with np.errstate(over="ignore", invalid="ignore"):
        value0, _, X0 = _costs(problem, U0)
    if not np.isfinite(value0):
        bad = np.flatnonzero(~np.all(np.isfinite(X0), axis=-1))
        raise RolloutDivergedError(int(bad[0]) if bad.size else N)

    lower = np.tile(box.lower, N)
    upper = np.tile(box.upper, N)

    def fun(Z, rows):
        with np.errstate(over="ignore", invalid="ignore"):
            value, penalty, _ = _costs(problem, Z.reshape(-1, N, m))
        out = value + penalty
        return np.where(np.isfinite(out), out, np.inf)

    def grad(Z, rows):
        return objective_gradient(problem, Z.reshape(-1, N, m)).reshape(Z.shape)

    res = projected_gradient(fun, U0.reshape(1, -1), lower, upper,
                             tol=problem.tol, max_iter=problem.max_iter, memory=10, grad=grad)
    U = res.z[0].reshape(N, m)
    value, penalty, X = _costs(problem, U)
    feasible = bool(np.all(model.state_box.contains(X, tol=1e-6)) and np.all(box.contains(U)))
    return OcpSolution(
        u_traj=U, x_traj=X, value=float(value), objective=float(value + penalty),
        feasible=feasible, iterations=int(res.iterations[0]),
        grad_norm=float(res.grad_norm[0]), converged=bool(res.converged[0]),
    )


def terminal_input(model: SystemModel, terminal, x, inner: InnerMinConfig | None = None):
    """Input appended by the shifted candidate at the predicted terminal state."""
    if terminal is None:
        u = np.zeros(model.m)
    elif isinstance(terminal, QuadraticTerminal):
        u = np.zeros(model.m) if terminal.K is None else -np.asarray(terminal.K) @ x
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutsideDomainWarning)
            u = extract_policy(terminal, model, x, inner or InnerMinConfig())
    return model.input_box.project(u)


def shift_warm_start(prev: OcpSolution, model: SystemModel, terminal,
                     inner: InnerMinConfig | None = None) -> np.ndarray:
    """``(u*_1, ..., u*_{N-1}, h(x*_N))``: the recursive-feasibility candidate."""
    u_last = terminal_input(model, terminal, prev.x_traj[-1], inner)
    return np.vstack([prev.u_traj[1:], u_last[None, :]])
