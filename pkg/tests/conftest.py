import pytest

from sbiwss.fem.navier_stokes import FluidProps, reynolds_to_theta, solve_steady_ns
from sbiwss.fem.space import FlowSpace
from sbiwss.geometry import GeometrySpec
from sbiwss.meshing import mesh_from_geometry

# h values of the three reconstruction meshes (see harness defaults)
H_COARSE, H_MEDIUM, H_FINE = 0.126, 0.09, 0.0653


@pytest.fixture(scope="session")
def stenosis():
    return GeometrySpec()


@pytest.fixture(scope="session")
def channel():
    return GeometrySpec(A=0.0)


@pytest.fixture(scope="session")
def props():
    return FluidProps()


@pytest.fixture(scope="session")
def coarse_space(stenosis):
    return FlowSpace(mesh_from_geometry(stenosis, H_COARSE), stenosis)


@pytest.fixture(scope="session")
def channel_space(channel):
    return FlowSpace(mesh_from_geometry(channel, 0.1), channel)


@pytest.fixture(scope="session")
def coarse_re100(coarse_space, stenosis, props):
    th = reynolds_to_theta(100, stenosis, props)
    return solve_steady_ns(coarse_space, props, th, tol=1e-12)


@pytest.fixture(scope="session")
def poiseuille(channel_space, channel, props):
    th = reynolds_to_theta(1000, channel, props)
    return solve_steady_ns(channel_space, props, th, tol=1e-12)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    REPORT = getattr(mod, "REPORT", None)
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for key in sorted(REPORT):
            terminalreporter.write_line(REPORT[key])
