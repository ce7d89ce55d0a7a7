import pytest

from weakclose.flux import LinearFlux, RationalBumpFlux, Window, hollig_flux, monotone_set
from weakclose.hulls import convex_envelope, residual_surface

# The bump envelope needs a wide p-pad: g = 0 at (q, beta) with |beta| near 2
# uses graph points far out where sigma is close to 0.
BUMP_P = Window(-6.0, 6.0, 257, 100.0)
BUMP_B = Window(-3.0, 3.0, 257, 1.5)
HOLLIG_P = Window(-2.0, 8.0, 257, 30.0)
HOLLIG_B = Window(0.0, 4.0, 257, 1.0)
LINEAR_P = Window.padded(-6.0, 6.0, 257)
LINEAR_B = Window.padded(-6.0, 6.0, 257)


@pytest.fixture(scope="session")
def bump():
    return RationalBumpFlux(4.0, 1.0)


@pytest.fixture(scope="session")
def bump_surface(bump):
    return residual_surface(bump, BUMP_P, BUMP_B)


@pytest.fixture(scope="session")
def bump_env(bump_surface):
    return convex_envelope(bump_surface)


@pytest.fixture(scope="session")
def bump_lambda(bump):
    return monotone_set(bump, Window(-6.0, 6.0, 257))


@pytest.fixture(scope="session")
def hollig_env():
    return convex_envelope(residual_surface(hollig_flux(), HOLLIG_P, HOLLIG_B))


@pytest.fixture(scope="session")
def hollig_lambda():
    return monotone_set(hollig_flux(), Window(-2.0, 8.0, 257))


@pytest.fixture(scope="session")
def linear_surface():
    return residual_surface(LinearFlux(1.0), LINEAR_P, LINEAR_B)


@pytest.fixture(scope="session")
def linear_env(linear_surface):
    return convex_envelope(linear_surface)
