import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from transeig.forms import assemble_forms, preset
from transeig.geometry import build_initial_mesh, refine_uniform
from transeig.space import build_dof_map

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


def problem(name, H=0.25, refine=0):
    """Mesh, dof map, coefficients and assembled forms for a named preset."""
    from transeig.forms import PRESET_DOMAINS

    mesh = build_initial_mesh(PRESET_DOMAINS[name], H)
    for _ in range(refine):
        mesh = refine_uniform(mesh)
    dm = build_dof_map(mesh)
    coeff = preset(name)
    return mesh, dm, coeff, assemble_forms(mesh, dm, coeff)


@pytest.fixture(scope="session")
def square_coarse():
    return problem("square-cond2", H=0.25)


@pytest.fixture(scope="session")
def disk_coarse():
    return problem("disk-a2n8", H=0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
