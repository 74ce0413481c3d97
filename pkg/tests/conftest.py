import numpy as np
import pytest

from vimpc.models import Box, SystemModel, linear_model, quadratic_form, solve_riccati
from vimpc.value_iteration import InnerMinConfig, ViConfig, vi_run


@pytest.fixture(scope="session")
def scalar_lq():
    """a = 0.5, b = 1, q = r = 1 with roomy boxes."""
    return linear_model([[0.5]], [[1.0]], [[1.0]], [[1.0]], Box.symmetric(10.0, 1),
                        Box.symmetric(2.0, 1), name="scalar_lq")


@pytest.fixture(scope="session")
def scalar_riccati(scalar_lq):
    P, K = solve_riccati([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    return float(P[0, 0]), float(K[0, 0])


@pytest.fixture(scope="session")
def scalar_vi(scalar_lq):
    cfg = ViConfig(domain=Box.symmetric(1.0, 1), n_train=20, n_eval=200, degrees=(2,),
                   target_c_delta=1e-12, rng_seed=0)
    return vi_run(scalar_lq, cfg, InnerMinConfig())


@pytest.fixture(scope="session")
def planar_lq():
    A = np.array([[0.9, 0.2], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    return linear_model(A, B, np.eye(2), [[1.0]], Box.symmetric(10.0, 2), Box.symmetric(10.0, 1),
                        name="planar_lq")


@pytest.fixture(scope="session")
def planar_vi(planar_lq):
    cfg = ViConfig(domain=Box.symmetric(1.0, 2), n_train=30, n_eval=200, degrees=(2,),
                   target_c_delta=1e-12, rng_seed=1)
    return vi_run(planar_lq, cfg, InnerMinConfig())


@pytest.fixture(scope="session")
def deadbeat():
    """f(x, u) = 0 with l(x, u) = |x|^2 + u^2."""

    def dynamics(x, u):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])
        return np.zeros(shape + (2,))

    return SystemModel(n=2, m=1, dynamics=dynamics, Q_map=quadratic_form(np.eye(2)), R=[[1.0]],
                       state_box=Box.symmetric(5.0, 2), input_box=Box.symmetric(1.0, 1),
                       Q_matrix=np.eye(2), name="deadbeat")


@pytest.fixture(scope="session")
def orbital_model():
    from vimpc.models import orbital_rendezvous

    return orbital_rendezvous()


# --- acceptance reporting ----------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()
N_CRITERIA = 9


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(k, passed, detail)`` records one criterion line for the summary."""
    table = request.config.stash[ACCEPTANCE_KEY]

    def record(k, passed, detail):
        table[k] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, config):
    table = config.stash.get(ACCEPTANCE_KEY, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in table:
            passed, detail = table[k]
            terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k}: NOT RUN")
