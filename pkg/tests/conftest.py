import numpy as np
import pytest

from roughsio.groups import euclidean, heisenberg, parse_group_config
from roughsio.polar import build_sphere_quadrature

POLARIZED_HEISENBERG_CONFIG = """
# upper-triangular 3x3 unipotent coordinates; inverse is not -x here
name polarized-h1
dim 3
exponents 1 1 2
term 3 x:1,0,0 y:0,1,0 c:1.0
"""


@pytest.fixture(scope="session")
def e2():
    return euclidean(2)


@pytest.fixture(scope="session")
def e3():
    return euclidean(3)


@pytest.fixture(scope="session")
def h1():
    return heisenberg()


@pytest.fixture(scope="session")
def polarized_h1():
    return parse_group_config(POLARIZED_HEISENBERG_CONFIG)


@pytest.fixture(scope="session")
def quad_e2(e2):
    return build_sphere_quadrature(e2, resolution=512, shell_h=0.02)


@pytest.fixture(scope="session")
def quad_e3(e3):
    return build_sphere_quadrature(e3, resolution=96, shell_h=0.02)


@pytest.fixture(scope="session")
def quad_h1(h1):
    return build_sphere_quadrature(h1, resolution=96, shell_h=0.02)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
