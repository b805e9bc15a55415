import pytest

from poisson_disorder import model, solver


@pytest.fixture(scope="session")
def refl():
    return model.ref_l()


@pytest.fixture(scope="session")
def refs():
    return model.ref_s()


@pytest.fixture(scope="session")
def refl_spec(refl):
    return solver.GridSpec.for_params(refl, nx=300)


@pytest.fixture(scope="session")
def refl_chain(refl, refl_spec):
    """v_0, ..., v_10 on the 300x300 grid."""
    return list(solver.iterates(refl, refl_spec, solver.iterations_needed(refl, 0.025)))


@pytest.fixture(scope="session")
def refl_v1(refl_chain):
    return refl_chain[1]


@pytest.fixture(scope="session")
def refl_value(refl_chain):
    return refl_chain[-1]


@pytest.fixture(scope="session")
def refl_small(refl):
    """Coarse converged grid for quick checks."""
    spec = solver.GridSpec.for_params(refl, nx=80)
    grid, _ = solver.solve(refl, spec, 0.025, n_probes=0)
    return grid


@pytest.fixture(scope="session")
def refs_window(refs):
    """REF-S value function on the window [0, 0.6]^2 at 512x512, with its iteration report."""
    spec = solver.GridSpec.for_params(refs, nx=512, window=0.6)
    return solver.solve(refs, spec, 0.01, n_probes=0)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    lines = request.config.stash[_VERDICTS]

    def record(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line
    return record
