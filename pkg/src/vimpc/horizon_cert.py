"""Stabilizing-horizon certificate for MPC with a learned terminal cost.

Closed-form part (``compute_horizons``, ``suboptimality_alpha``) is exact
integer/float arithmetic. The data-driven constants ``gamma`` and ``epsilon``
are sample estimates with safety factors (1.05 and 0.95); they are
estimates, not proofs.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from vimpc.approximator import ValueApproximator
from vimpc.errors import CertificationError, UsageError
from vimpc.models import Box, SystemModel, stage_cost, state_cost
from vimpc.value_iteration import InnerMinConfig, OutsideDomainWarning, extract_policy

log = logging.getLogger(__name__)

GAMMA_INFLATION = 1.05
GAMMA_FLOOR = 1.0 + 1e-6
EPSILON_SHRINK = 0.95
# published constants of the LQR-terminal horizon construction, kept for comparison
LQR_REFERENCE = {"C": 3.66, "rho": 0.91, "epsilon": 0.5, "N": 210}


@dataclass(frozen=True)
class HorizonCertificate:
    gamma: float
    epsilon: float
    V_bar: float
    c_e: float
    c_delta: float
    gamma_lower: float
    gamma_upper: float
    rho: float
    c_N: float
    N_0: int
    N_Omega: int
    N_lower: int
    N_Vbar: int
    c_V: float
    alpha: float
    alpha_printed: float
    region_radius: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HorizonCertificate":
        return cls(**data)


def _ceil(v: float) -> int:
    # guard against 2.0000000000000004-style rounding in exact ratios
    r = round(v)
    return int(r) if abs(v - r) <= 1e-12 * max(1.0, abs(v)) else math.ceil(v)


def compute_horizons(gamma: float, epsilon: float, V_bar: float, c_e: float, c_delta: float,
                     region_radius: float | None = None) -> HorizonCertificate:
    if not gamma > 1.0:
        raise CertificationError(f"rho_gamma undefined: gamma must exceed 1 (got {gamma})")
    if not (epsilon > 0 and V_bar > 0):
        raise CertificationError("epsilon and V_bar must be positive")
    c = c_e + c_delta
    if c_e < 0 or c_delta < 0:
        raise CertificationError("error constants must be nonnegative")
    if c >= 1.0:
        raise CertificationError(
            f"c_e + c_delta = {c} >= 1 violates the decrease hypothesis of the VI stability lemma"
        )
    gamma_lower = min(gamma, V_bar / epsilon)
    gamma_upper = max(gamma, V_bar / epsilon)
    rho = (gamma - 1.0) / gamma
    c_N = c / (1.0 - c)
    denom = math.log(gamma) - math.log(gamma - 1.0)
    log_g = math.log(gamma)
    log_cNg = math.log(c_N) + log_g if c_N > 0 else -math.inf

    N_0 = _ceil(max(0.0, (V_bar - gamma_lower * epsilon) / epsilon))
    N_Omega = N_0 + _ceil(max(log_g, 0.0) / denom)
    N_lower = N_0 + _ceil(log_cNg / denom) if c_N > 0 else N_0
    N_Vbar = N_0 + _ceil(max(log_g, log_cNg, 0.0) / denom)

    N = N_Vbar + 1
    c_V = 1.0 - c_N * rho ** (N - N_0) * gamma
    return HorizonCertificate(
        gamma=float(gamma), epsilon=float(epsilon), V_bar=float(V_bar),
        c_e=float(c_e), c_delta=float(c_delta),
        gamma_lower=gamma_lower, gamma_upper=gamma_upper, rho=rho, c_N=c_N,
        N_0=N_0, N_Omega=N_Omega, N_lower=N_lower, N_Vbar=N_Vbar,
        c_V=c_V, alpha=c_V / (1.0 + c_e), alpha_printed=(1.0 + c_e) / c_V,
        region_radius=region_radius,
    )


def decrease_factor(cert: HorizonCertificate, N: int) -> float:
    """``c_N rho^(N - N_0) gamma``: the fraction of stage cost the terminal error may eat."""
    return cert.c_N * cert.rho ** (N - cert.N_0) * cert.gamma


def suboptimality_alpha(cert: HorizonCertificate, N: int) -> float:
    """``alpha = c_V(N) / (1 + c_e)`` in ``sum l <= V_inf / alpha``."""
    if N <= cert.N_lower and cert.c_N > 0:
        raise CertificationError(f"c_V nonpositive: N={N} must exceed N_lower={cert.N_lower}")
    c_V = 1.0 - decrease_factor(cert, N)
    if c_V <= 0:
        raise CertificationError(f"c_V nonpositive at N={N}")
    alpha = c_V / (1.0 + cert.c_e)
    assert 0.0 < alpha <= 1.0
    return alpha


def sweep(cert: HorizonCertificate, lo: float = 0.01, hi: float = 0.97, steps: int = 25):
    """Recompute the horizons over a grid of ``c_e + c_delta``.

    The sum is split between the two constants in the certificate's ratio
    (evenly when both are zero). Rows: ``(c, N_0, N_Omega, N_Vbar, alpha)``.
    """
    total = cert.c_e + cert.c_delta
    share = cert.c_e / total if total > 0 else 0.5
    rows = []
    for c in np.linspace(lo, hi, steps):
        c = float(c)
        cc = compute_horizons(cert.gamma, cert.epsilon, cert.V_bar, share * c, (1 - share) * c)
        rows.append((c, cc.N_0, cc.N_Omega, cc.N_Vbar, cc.alpha))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["c_e_plus_c_delta", "N_0", "N_Omega", "N_Vbar", "alpha"])
    for c, n0, nom, nv, a in rows:
        writer.writerow([repr(c), n0, nom, nv, repr(float(a))])
    return buf.getvalue()


# --- data-driven constants -------------------------------------------------

def policy_rollout_cost(approx: ValueApproximator, model: SystemModel, X, n_roll: int,
                        inner: InnerMinConfig, policy=None, escape_box: Box | None = None):
    """Cost of ``n_roll`` greedy steps plus the terminal value, per start state.

    Returns ``(costs, escaped)``; rows whose trajectory leaves ``escape_box``
    are flagged and stop accumulating.
    """
    policy = policy or (lambda Z: extract_policy(approx, model, Z, inner))
    X = np.atleast_2d(np.array(X, dtype=float))
    cost = np.zeros(X.shape[0])
    escaped = np.zeros(X.shape[0], dtype=bool)
    for _ in range(n_roll):
        live = np.flatnonzero(~escaped)
        if live.size == 0:
            break
        # rollouts may leave Omega; only escape_box matters here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutsideDomainWarning)
            U = policy(X[live])
        cost[live] += stage_cost(model, X[live], U)
        X[live] = model.dynamics(X[live], U)
        if escape_box is not None:
            escaped[live] |= ~escape_box.contains(X[live])
    live = ~escaped
    cost[live] += approx(X[live])
    return cost, escaped


def estimate_gamma(approx: ValueApproximator, model: SystemModel, omega: Box, samples,
                   n_roll: int = 50, inner: InnerMinConfig | None = None,
                   eta: float = 1e-8) -> float:
    """Sampled bound ``max V_N^i(x) / l(x, 0)`` over ``samples``, inflated by 1.05."""
    if n_roll < 1:
        raise UsageError("n_roll must be at least 1")
    inner = inner or InnerMinConfig()
    X = np.atleast_2d(model.check_state(samples))
    l0 = state_cost(model, X)
    X = X[l0 >= eta]
    l0 = l0[l0 >= eta]
    if X.shape[0] == 0:
        raise CertificationError("no samples away from the origin for gamma estimation")
    costs, escaped = policy_rollout_cost(approx, model, X, n_roll, inner,
                                         escape_box=omega.scaled(2.0))
    n_out = int(np.sum(escaped))
    if n_out:
        log.warning("gamma estimation: %d of %d rollouts left 2x Omega", n_out, X.shape[0])
    if n_out > 0.5 * X.shape[0]:
        raise CertificationError(
            f"gamma estimation unreliable: {n_out} of {X.shape[0]} rollouts left 2x Omega"
        )
    ratio = np.max(costs[~escaped] / l0[~escaped])
    return float(max(GAMMA_INFLATION * ratio, GAMMA_FLOOR))


def sample_sublevel_set(model: SystemModel, epsilon: float, count: int, rng: np.random.Generator,
                        boundary_fraction: float = 0.5):
    """Points of ``{x : l(x, 0) <= epsilon}``.

    Directions are uniform on the sphere; the boundary radius along each is
    found by bisection, so any radially increasing ``Q`` works. The first
    ``boundary_fraction`` of the points sit on the boundary.
    """
    D = rng.standard_normal((count, model.n))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    hi = np.ones(count)
    for _ in range(200):
        grow = state_cost(model, hi[:, None] * D) < epsilon
        if not np.any(grow):
            break
        hi[grow] *= 2.0
    lo = np.zeros(count)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = state_cost(model, mid[:, None] * D) <= epsilon
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    radius = lo
    n_bd = int(round(boundary_fraction * count))
    frac = np.ones(count)
    frac[n_bd:] = rng.uniform(size=count - n_bd) ** (1.0 / model.n)
    return (frac * radius)[:, None] * D


def estimate_epsilon(approx: ValueApproximator, model: SystemModel, omega: Box,
                     inner: InnerMinConfig | None = None, policy=None, n_points: int = 1000,
                     seed: int = 0, rel_tol: float = 1e-3) -> float:
    """Largest tested ``epsilon`` with ``B_eps`` in ``omega`` and an admissible policy there.

    A candidate passes when its sampled points lie in ``omega`` and in the
    state box, and the policy input at each point lies strictly inside the
    input box (an active input bound means the greedy policy is clipped).
    The result is shrunk by 0.95.
    """
    inner = inner or InnerMinConfig()
    policy = policy or (lambda Z: extract_policy(approx, model, Z, inner))
    box_u = model.input_box
    margin = 1e-9 * (box_u.upper - box_u.lower)
    centers = []
    for i in range(model.n):
        for bound in (omega.lower[i], omega.upper[i]):
            c = 0.5 * (omega.lower + omega.upper)
            c[i] = bound
            centers.append(c)
    eps_max = float(np.min(state_cost(model, np.array(centers))))
    if eps_max <= 0:
        raise CertificationError("terminal set condition unverifiable: stage cost vanishes on a face of Omega")

    witness = {}

    def passes(eps):
        rng = np.random.default_rng(seed)
        X = sample_sublevel_set(model, eps, n_points, rng)
        in_sets = omega.contains(X) & model.state_box.contains(X)
        if not np.all(in_sets):
            witness["x"] = X[np.argmin(in_sets)]
            return False
        U = policy(X)
        ok = np.all((U > box_u.lower + margin) & (U < box_u.upper - margin), axis=1)
        if not np.all(ok):
            witness["x"] = X[np.argmin(ok)]
            return False
        return True

    if passes(eps_max):
        return EPSILON_SHRINK * eps_max
    lo, hi = 0.0, eps_max
    while hi - lo > rel_tol * eps_max:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise CertificationError(
            f"terminal set condition unverifiable: failing witness {np.asarray(witness.get('x')).tolist()}"
        )
    return EPSILON_SHRINK * lo


def estimate_V_bar(approx: ValueApproximator, model: SystemModel, states, n_roll: int = 50,
                   inner: InnerMinConfig | None = None) -> float:
    """Upper estimate of ``V_N`` over start states: greedy-policy cost, inflated by 1.05."""
    inner = inner or InnerMinConfig()
    costs, _ = policy_rollout_cost(approx, model, states, n_roll, inner)
    return float(GAMMA_INFLATION * np.max(costs))
