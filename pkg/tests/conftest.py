import hypothesis
import pytest

from afemeig import Coefficients, build_initial, build_space, uniform_refine

hypothesis.settings.register_profile("suite", deadline=None, max_examples=60)
hypothesis.settings.load_profile("suite")


def square_mesh(rounds=0):
    m = build_initial([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
                      [(0, 1, 2), (0, 2, 3)])
    return uniform_refine(m, rounds) if rounds else m


def lshape_mesh(rounds=0):
    m = build_initial(
        [(-1, -1), (0, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
        [(0, 1, 3), (0, 3, 2), (2, 3, 6), (2, 6, 5), (3, 4, 7), (3, 7, 6)])
    return uniform_refine(m, rounds) if rounds else m


@pytest.fixture(scope="session")
def laplace_coeffs():
    return Coefficients(a=1.0, c=0.0)


@pytest.fixture(scope="session")
def p1_square_space():
    return build_space(square_mesh(5), 1)


@pytest.fixture(scope="session")
def p2_square_space():
    return build_space(square_mesh(4), 2)
