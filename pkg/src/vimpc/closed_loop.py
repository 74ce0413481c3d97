"""Receding-horizon simulation, performance checks and run comparison."""

from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from vimpc.approximator import ValueApproximator
from vimpc.errors import RolloutDivergedError, UsageError
from vimpc.horizon_cert import HorizonCertificate, decrease_factor
from vimpc.models import LqrBaseline, SystemModel, stage_cost, state_cost
from vimpc.ocp_solver import OcpProblem, QuadraticTerminal, shift_warm_start, solve_ocp
from vimpc.value_iteration import InnerMinConfig, extract_policy

log = logging.getLogger(__name__)


class Controller(str, enum.Enum):
    ADP_MPC = "ADP_MPC"
    NO_TERMINAL = "NO_TERMINAL"
    LQR_TERMINAL = "LQR_TERMINAL"
    RAW_POLICY = "RAW_POLICY"


@dataclass(frozen=True)
class SimConfig:
    controller: Controller
    x0: np.ndarray
    N: int = 10
    steps: int = 100
    warm_start: bool = True
    mu: float = 1e4
    tol: float = 1e-7
    max_iter: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "controller", Controller(self.controller))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if self.steps < 1:
            raise UsageError("steps must be at least 1")


@dataclass(frozen=True)
class Artifacts:
    approximator: ValueApproximator | None = None
    certificate: HorizonCertificate | None = None
    lqr: LqrBaseline | None = None
    inner: InnerMinConfig = field(default_factory=InnerMinConfig)


@dataclass
class ClosedLoopTrace:
    controller: Controller
    N: int
    states: np.ndarray
    inputs: np.ndarray
    stage_costs: np.ndarray
    values: np.ndarray
    feasible: np.ndarray
    terminal_states: np.ndarray | None = None
    terminal_in_B_eps: np.ndarray | None = None
    epsilon: float | None = None
    solver_iterations: np.ndarray | None = None

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self) -> str:
        n, m = self.states.shape[1], self.inputs.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                        + ["stage_cost", "V_N", "feasible", "terminal_in_B_eps"])
        for k in range(self.steps + 1):
            row = [k] + [repr(float(v)) for v in self.states[k]]
            if k < self.steps:
                in_b = "" if self.terminal_in_B_eps is None else int(self.terminal_in_B_eps[k])
                row += [repr(float(v)) for v in self.inputs[k]]
                row += [repr(float(self.stage_costs[k])), repr(float(self.values[k])),
                        int(self.feasible[k]), in_b]
            else:
                row += [""] * (m + 4)
            writer.writerow(row)
        return buf.getvalue()


def _terminal_for(controller: Controller, artifacts: Artifacts):
    if controller is Controller.ADP_MPC:
        if artifacts.approximator is None:
            raise UsageError("ADP_MPC requires a trained approximator")
        return artifacts.approximator
    if controller is Controller.LQR_TERMINAL:
        if artifacts.lqr is None:
            raise UsageError("LQR_TERMINAL requires the LQR baseline")
        return QuadraticTerminal(artifacts.lqr.P, artifacts.lqr.K)
    return None


def run_closed_loop(model: SystemModel, cfg: SimConfig, artifacts: Artifacts) -> ClosedLoopTrace:
    x = model.check_state(cfg.x0).copy()
    steps = cfg.steps
    states = np.empty((steps + 1, model.n))
    inputs = np.empty((steps, model.m))
    values = np.full(steps, np.nan)
    feasible = np.zeros(steps, dtype=bool)
    iters = np.zeros(steps, dtype=int)
    states[0] = x
    eps = artifacts.certificate.epsilon if artifacts.certificate is not None else None

    if cfg.controller is Controller.RAW_POLICY:
        if artifacts.approximator is None:
            raise UsageError("RAW_POLICY requires a trained approximator")
        for k in range(steps):
            u = extract_policy(artifacts.approximator, model, x, artifacts.inner)
            inputs[k] = u
            feasible[k] = bool(model.state_box.contains(x, tol=1e-6))
            x = model.dynamics(x, u)
            states[k + 1] = x
        return ClosedLoopTrace(cfg.controller, 0, states, inputs,
                               stage_cost(model, states[:-1], inputs), values, feasible,
                               epsilon=eps, solver_iterations=iters)

    terminal = _terminal_for(cfg.controller, artifacts)
    term_states = np.empty((steps, model.n))
    warm = None
    for k in range(steps):
        problem = OcpProblem(model, cfg.N, x, terminal, mu=cfg.mu, tol=cfg.tol, max_iter=cfg.max_iter)
        try:
            sol = solve_ocp(problem, warm)
        except RolloutDivergedError as exc:
            raise RolloutDivergedError(k, f"closed-loop step {k}: {exc}") from exc
        if not sol.feasible:
            log.warning("step %d: OCP solution infeasible; applying best-found input", k)
        inputs[k] = sol.u_traj[0]
        values[k] = sol.value
        feasible[k] = sol.feasible
        iters[k] = sol.iterations
        term_states[k] = sol.x_traj[-1]
        x = model.dynamics(x, sol.u_traj[0])
        states[k + 1] = x
        if cfg.warm_start:
            warm = shift_warm_start(sol, model, terminal, artifacts.inner)

    in_b = None if eps is None else state_cost(model, term_states) <= eps
    return ClosedLoopTrace(cfg.controller, cfg.N, states, inputs,
                           stage_cost(model, states[:-1], inputs), values, feasible,
                           terminal_states=term_states, terminal_in_B_eps=in_b,
                           epsilon=eps, solver_iterations=iters)


def performance_sum(trace: ClosedLoopTrace) -> float:
    return float(np.sum(trace.stage_costs))


@dataclass
class ValueDecreaseReport:
    violations: list
    worst_excess: float

    @property
    def passed(self) -> bool:
        return not self.violations


def check_value_decrease(trace: ClosedLoopTrace, cert: HorizonCertificate | None,
                         slack: float = 1e-5) -> ValueDecreaseReport:
    """Steps where ``V_N`` fails to drop by ``(1 - c_N rho^(N-N_0) gamma) l(x(k), u(k))``."""
    if cert is None:
        raise UsageError("value-decrease check needs a horizon certificate")
    if trace.controller is Controller.RAW_POLICY:
        raise UsageError("value-decrease check applies to MPC traces only")
    factor = decrease_factor(cert, trace.N)
    V, l = trace.values, trace.stage_costs
    if V.size < 2:
        return ValueDecreaseReport([], -np.inf)
    excess = (V[1:] - V[:-1]) - (-l[:-1] + factor * l[:-1] + slack * (1.0 + V[:-1]))
    bad = np.flatnonzero(excess > 0)
    return ValueDecreaseReport([int(k) for k in bad], float(np.max(excess)))


def estimate_v_infinity(model: SystemModel, x0, N: int = 400, warm_start=None, mu: float = 1e4,
                        tol: float = 1e-7, max_iter: int = 2000):
    """Long-horizon, zero-terminal OCP value as a stand-in for ``V_inf(x0)``.

    Returns ``(value, tail_stage_cost, solution)``; the tail stage cost shows
    how much the truncation could still be missing.
    """
    if warm_start is not None:
        ws = np.zeros((N, model.m))
        k = min(N, len(warm_start))
        ws[:k] = np.asarray(warm_start)[:k]
        warm_start = ws
    sol = solve_ocp(OcpProblem(model, N, x0, None, mu=mu, tol=tol, max_iter=max_iter), warm_start)
    tail = float(sol.stage_costs(model)[-1])
    return sol.value, tail, sol


# --- comparison --------------------------------------------------------------

COMPARE_COLUMNS = ["label", "controller", "N", "sum_stage_cost", "final_norm",
                   "worst_violation", "first_step_in_B_eps"]


def compare_runs(traces, labels, model: SystemModel, epsilon: float | None = None) -> list[dict]:
    if len(traces) != len(labels):
        raise UsageError("one label per trace required")
    if traces:
        x0 = traces[0].x0
        for t in traces[1:]:
            if not np.array_equal(t.x0, x0):
                raise UsageError("traces must share the initial state x0")
    rows = []
    for trace, label in zip(traces, labels):
        worst = max(float(np.max(model.state_box.violation(trace.states))),
                    float(np.max(model.input_box.violation(trace.inputs))))
        first = None
        eps = epsilon if epsilon is not None else trace.epsilon
        if eps is not None:
            inside = np.flatnonzero(state_cost(model, trace.states) <= eps)
            first = int(inside[0]) if inside.size else None
        rows.append({
            "label": label,
            "controller": trace.controller.value,
            "N": trace.N,
            "sum_stage_cost": performance_sum(trace),
            "final_norm": float(np.linalg.norm(trace.states[-1])),
            "worst_violation": worst,
            "first_step_in_B_eps": first,
        })
    return rows


def comparison_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARE_COLUMNS)
    for r in rows:
        writer.writerow([
            r["label"], r["controller"], r["N"], repr(r["sum_stage_cost"]), repr(r["final_norm"]),
            repr(r["worst_violation"]),
            "" if r["first_step_in_B_eps"] is None else r["first_step_in_B_eps"],
        ])
    return buf.getvalue()


def plot_traces(traces, labels, path):
    """Write an SVG with state and input trajectories for each run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "vimpc"
    n = traces[0].states.shape[1]
    if n == 4:
        panels = [("position", [0, 1]), ("velocity", [2, 3])]
    else:
        panels = [("state", list(range(n)))]
    fig, axes = plt.subplots(len(panels) + 1, 1, figsize=(7, 2.4 * (len(panels) + 1)), sharex=True)
    for trace, label in zip(traces, labels):
        k = np.arange(trace.states.shape[0])
        for ax, (name, idx) in zip(axes, panels):
            for i in idx:
                ax.plot(k, trace.states[:, i], label=f"{label} x{i + 1}")
            ax.set_ylabel(name)
        for i in range(trace.inputs.shape[1]):
            axes[-1].step(k[:-1], trace.inputs[:, i], where="post", label=f"{label} u{i + 1}")
    axes[-1].set_ylabel("input")
    axes[-1].set_xlabel("k")
    for ax in axes:
        ax.legend(fontsize=6, ncol=2)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
