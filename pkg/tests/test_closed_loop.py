import numpy as np
import pytest

from vimpc.closed_loop import (
    COMPARE_COLUMNS,
    Artifacts,
    Controller,
    SimConfig,
    check_value_decrease,
    comparison_csv,
    compare_runs,
    estimate_v_infinity,
    performance_sum,
    run_closed_loop,
)
from vimpc.errors import UsageError
from vimpc.horizon_cert import compute_horizons
from vimpc.models import lqr_baseline, stage_cost, step


@pytest.fixture(scope="module")
def scalar_artifacts(scalar_vi, scalar_lq):
    cert = compute_horizons(1.5, 0.5, 1.0, scalar_vi.c_e_measured, scalar_vi.c_delta_measured)
    return Artifacts(scalar_vi.approximator, cert, lqr_baseline(scalar_lq))


@pytest.mark.parametrize("controller", list(Controller))
def test_zero_state_zero_trace(scalar_lq, scalar_artifacts, controller):
    trace = run_closed_loop(scalar_lq, SimConfig(controller, [0.0], N=3, steps=5), scalar_artifacts)
    np.testing.assert_array_equal(trace.states, 0.0)
    np.testing.assert_array_equal(trace.inputs, 0.0)
    assert performance_sum(trace) == 0.0


def test_zero_trace_value_decrease_vacuous(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.0], N=3, steps=5),
                            scalar_artifacts)
    assert check_value_decrease(trace, scalar_artifacts.certificate).passed


@pytest.mark.parametrize("N", [1, 3, 8])
def test_adp_mpc_matches_lqr(scalar_lq, scalar_artifacts, scalar_riccati, N):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.8], N=N, steps=20),
                            scalar_artifacts)
    k = scalar_riccati[1]
    np.testing.assert_allclose(trace.inputs[:, 0], -k * trace.states[:-1, 0], atol=1e-4)
    assert trace.feasible.all()


def test_long_run_cost_matches_riccati(scalar_lq, scalar_artifacts, scalar_riccati):
    x0 = 0.8
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [x0], N=1, steps=500),
                            scalar_artifacts)
    assert performance_sum(trace) == pytest.approx(scalar_riccati[0] * x0**2, rel=0.01)


def test_single_step_sum(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.NO_TERMINAL, [0.5], N=2, steps=1),
                            scalar_artifacts)
    assert performance_sum(trace) == pytest.approx(
        float(stage_cost(scalar_lq, [0.5], trace.inputs[0])), rel=1e-15)


def test_replay_reproduces_states(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.LQR_TERMINAL, [0.9], N=4, steps=15),
                            scalar_artifacts)
    x = trace.states[0]
    for k in range(trace.steps):
        x = step(scalar_lq, x, trace.inputs[k])
        np.testing.assert_array_equal(x, trace.states[k + 1])


def test_first_input_from_ocp(scalar_lq, scalar_artifacts):
    from vimpc.ocp_solver import OcpProblem, solve_ocp

    cfg = SimConfig(Controller.ADP_MPC, [0.7], N=3, steps=1)
    trace = run_closed_loop(scalar_lq, cfg, scalar_artifacts)
    sol = solve_ocp(OcpProblem(scalar_lq, 3, [0.7], scalar_artifacts.approximator))
    np.testing.assert_array_equal(trace.inputs[0], sol.u_traj[0])
    assert trace.values[0] == sol.value


def test_raw_policy_converges(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.RAW_POLICY, [0.9], steps=40),
                            scalar_artifacts)
    assert abs(trace.states[-1, 0]) < 1e-8
    assert trace.N == 0


def test_exact_terminal_value_decreases(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.9], N=2, steps=30),
                            scalar_artifacts)
    report = check_value_decrease(trace, scalar_artifacts.certificate)
    assert report.passed
    assert report.worst_excess <= 0


def test_value_decrease_flags_fabricated_increase(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.9], N=2, steps=5),
                            scalar_artifacts)
    trace.values[3] = trace.values[2] + 1.0
    assert 2 in check_value_decrease(trace, scalar_artifacts.certificate).violations


def test_value_decrease_needs_certificate(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.5], N=2, steps=3),
                            scalar_artifacts)
    with pytest.raises(UsageError):
        check_value_decrease(trace, None)


def test_missing_artifact_rejected(scalar_lq):
    with pytest.raises(UsageError, match="approximator"):
        run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.5], N=2, steps=3), Artifacts())
    with pytest.raises(UsageError, match="LQR"):
        run_closed_loop(scalar_lq, SimConfig(Controller.LQR_TERMINAL, [0.5], N=2, steps=3),
                        Artifacts())


def test_steps_must_be_positive():
    with pytest.raises(UsageError):
        SimConfig(Controller.NO_TERMINAL, [0.5], steps=0)


def test_performance_bound_lq(scalar_lq, scalar_artifacts, scalar_riccati):
    from vimpc.horizon_cert import suboptimality_alpha

    x0, N = 0.8, 3
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [x0], N=N, steps=500),
                            scalar_artifacts)
    alpha = suboptimality_alpha(scalar_artifacts.certificate, N)
    assert performance_sum(trace) <= scalar_riccati[0] * x0**2 / alpha * 1.05


def test_v_infinity_estimate_lq(scalar_lq, scalar_riccati):
    value, tail, sol = estimate_v_infinity(scalar_lq, [0.8], N=60)
    assert value == pytest.approx(scalar_riccati[0] * 0.64, rel=1e-6)
    assert tail < 1e-12 and sol.feasible


# --- comparison -------------------------------------------------------------

def test_compare_identical_rows(scalar_lq, scalar_artifacts):
    cfg = SimConfig(Controller.ADP_MPC, [0.6], N=2, steps=10)
    a = run_closed_loop(scalar_lq, cfg, scalar_artifacts)
    b = run_closed_loop(scalar_lq, cfg, scalar_artifacts)
    rows = compare_runs([a, b], ["a", "a"], scalar_lq)
    assert rows[0] == rows[1]
    assert list(rows[0]) == COMPARE_COLUMNS
    assert rows[0]["worst_violation"] == 0.0


def test_compare_first_step_in_B_eps(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.NO_TERMINAL, [0.9], N=2, steps=10),
                            scalar_artifacts)
    row = compare_runs([trace], ["t"], scalar_lq, epsilon=0.1)[0]
    l = stage_cost(scalar_lq, trace.states, np.zeros((11, 1)))
    assert row["first_step_in_B_eps"] == int(np.flatnonzero(l <= 0.1)[0])


def test_compare_rejects_x0_mismatch(scalar_lq, scalar_artifacts):
    a = run_closed_loop(scalar_lq, SimConfig(Controller.NO_TERMINAL, [0.5], N=2, steps=2),
                        scalar_artifacts)
    b = run_closed_loop(scalar_lq, SimConfig(Controller.NO_TERMINAL, [0.6], N=2, steps=2),
                        scalar_artifacts)
    with pytest.raises(UsageError, match="x0"):
        compare_runs([a, b], ["a", "b"], scalar_lq)


def test_csv_columns(scalar_lq, scalar_artifacts):
    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.5], N=2, steps=4),
                            scalar_artifacts)
    lines = trace.to_csv().splitlines()
    assert lines[0] == "k,x1,u1,stage_cost,V_N,feasible,terminal_in_B_eps"
    assert len(lines) == 6
    table = comparison_csv(compare_runs([trace], ["only"], scalar_lq)).splitlines()
    assert table[0] == ",".join(COMPARE_COLUMNS)


def test_plot_is_deterministic(tmp_path, scalar_lq, scalar_artifacts):
    from vimpc.closed_loop import plot_traces

    trace = run_closed_loop(scalar_lq, SimConfig(Controller.ADP_MPC, [0.5], N=2, steps=4),
                            scalar_artifacts)
    plot_traces([trace], ["a"], tmp_path / "a.svg")
    plot_traces([trace], ["a"], tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
