import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from campanato_t1 import czkernel as cz
from campanato_t1 import geometry as geo
from campanato_t1 import moduli

settings.register_profile("pkg", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

# lines collected by the acceptance module, echoed in the terminal summary
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def square():
    return geo.unit_square()


@pytest.fixture(scope="session")
def ball():
    return geo.Ball()


@pytest.fixture(scope="session")
def notch():
    return geo.notched_square()


@pytest.fixture(scope="session")
def gdisk():
    return geo.GraphPerturbedDisk(moduli.power(0.5))


@pytest.fixture(scope="session")
def gdisk_tilde():
    return geo.GraphPerturbedDisk(moduli.power(0.5).tilde())


@pytest.fixture(scope="session")
def bre():
    return cz.beurling_re()


def polar_tchi_square(k, y):
    """Oracle for T chi of the unit square at an interior point.

    Along each ray from y the radial integral of Omega/r^2 * r dr is
    ln(R(theta)) plus a term that integrates to zero against Omega, so
    T chi(y) = int Omega(theta) ln R(theta) dtheta, with R the exit distance.
    """
    from scipy import integrate

    y = np.asarray(y, float)
    corners = np.array([[1, 1], [0, 1], [0, 0], [1, 0]], float) - y
    angs = np.sort(np.mod(np.arctan2(corners[:, 1], corners[:, 0]), 2 * np.pi))

    def exit_len(th):
        c, s = np.cos(th), np.sin(th)
        ts = []
        if c > 0:
            ts.append((1 - y[0]) / c)
        if c < 0:
            ts.append(-y[0] / c)
        if s > 0:
            ts.append((1 - y[1]) / s)
        if s < 0:
            ts.append(-y[1] / s)
        return min(ts)

    f = lambda th: float(k.omega_angle(np.array(th))) * np.log(exit_len(th))
    edges = np.concatenate([[0.0], angs, [2 * np.pi]])
    return sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
               for a, b in zip(edges[:-1], edges[1:]) if b > a)
