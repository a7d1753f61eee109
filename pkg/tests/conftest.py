import numpy as np
import pytest

from dwpom.model_core import PomDesign, expit

TRUE_BLIPS = np.array([-0.5, 1.0, -0.5, 1.0, -1.0, 0.5])
ZETA = (0.619, 2.197)


def linear_pom_data(H, rng, *, beta=0.5, cut2_shift=0.0, zeta=ZETA):
    """Randomised treatments and a purely linear cumulative-logit outcome.

    ``cut2_shift`` adds an extra slope on x2 to the upper cutpoint only,
    breaking proportional odds.
    """
    x1 = rng.uniform(size=H)
    x2 = rng.normal(size=H)
    x3 = rng.integers(0, 2, (H, 2)).sum(axis=1).astype(float)
    a_s = rng.integers(0, 2, H)
    a_r = rng.integers(0, 2, H)
    one = np.ones(H)
    xi, psi, phi = TRUE_BLIPS[:2], TRUE_BLIPS[2:4], TRUE_BLIPS[4:]
    lin = (beta * x2 + a_s * (xi[0] + xi[1] * x1) + a_r * (psi[0] + psi[1] * x1)
           + a_s * a_r * (phi[0] + phi[1] * x3))
    F1 = expit(zeta[0] - lin)
    F2 = expit(zeta[1] - lin - cut2_shift * x2)
    r = rng.uniform(size=H)
    u = 1 + (r > F1).astype(int) + (r > F2).astype(int)
    design = PomDesign(x2[:, None], np.c_[one, x1], np.c_[one, x1], np.c_[one, x3], a_s, a_r)
    return design, u


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
