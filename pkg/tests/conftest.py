import numpy as np
import pytest

import topt.coresys.logger as logger
from topt.material import KappaParams
from topt.mesh import BoundarySegment, BoundarySpec, GAMMA0, GAMMA1, build_rect_mesh, tag_boundary
from topt.physics_elastic import ElasticProblem
from topt.physics_heat import HeatProblem


@pytest.fixture(autouse=True)
def quiet_logger():
    logger.initialize(0)
    logger.set_log_dir(None)
    logger.clear_error_history()
    yield
    logger.set_log_dir(None)


def heat_mesh(n, start=0.44, end=0.56):
    """Unit square with Gamma0 on a band of the left edge."""
    spec = BoundarySpec((BoundarySegment("left", start, end, GAMMA0),))
    return tag_boundary(build_rect_mesh(1.0, 1.0, n, n), spec)


def elastic_mesh(nx, ny, start=0.44, end=0.56):
    """[0,2]x[0,1], clamped left edge, Gamma1 band on the right edge."""
    spec = BoundarySpec((BoundarySegment("left", 0.0, 1.0, GAMMA0),
                         BoundarySegment("right", start, end, GAMMA1)))
    return tag_boundary(build_rect_mesh(2.0, 1.0, nx, ny), spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_heat():
    """8x8 conduction problem; the band is widened so that it holds mesh edges."""
    return HeatProblem(mesh=heat_mesh(8, 0.375, 0.625), kappa=KappaParams(a=1.3, p=3.0), f=0.5, g=0.0,
                       solver="direct")


@pytest.fixture
def small_elastic():
    """8x4 cantilever with the load spread over the middle half of the right edge."""
    return ElasticProblem(mesh=elastic_mesh(8, 4, 0.25, 0.75), kappa=KappaParams(a=2.0, p=3.0),
                          solver="direct")


@pytest.fixture
def make_heat_mesh():
    return heat_mesh


@pytest.fixture
def make_elastic_mesh():
    return elastic_mesh
