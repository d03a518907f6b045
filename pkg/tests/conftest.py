import numpy as np
import pytest

from supershapes.geometry import SuperformulaParams

# Bounds the GA draws genes from; shape-parameter tests sample within them.
SHAPE_LOWS = np.array([0.0, 0.1, 0.1, 0.1, 0.0, 0.0])
SHAPE_HIGHS = np.array([20.0, 5.0, 5.0, 20.0, 20.0, 20.0])


def random_params(rng: np.random.Generator) -> SuperformulaParams:
    return SuperformulaParams(*rng.uniform(SHAPE_LOWS, SHAPE_HIGHS))


@pytest.fixture
def identity_params() -> SuperformulaParams:
    """a=b=1, n1=n2=n3=2: radius is exactly 1 at every angle."""
    return SuperformulaParams(m=3.0, a=1.0, b=1.0, n1=2.0, n2=2.0, n3=2.0)
