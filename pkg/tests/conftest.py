import numpy as np
import pytest

from tetherplan import model


def hover_state(params: model.ModelParams, r: float = 2.0, X: float = 0.0):
    """At-rest state hanging straight down with the weight carried on f_r."""
    x = np.zeros(12)
    x[model.I_R] = r
    x[model.I_L] = r
    x[model.I_X] = X
    x[9] = -params.m_bar * params.g
    return x


@pytest.fixture
def table_params():
    return model.ModelParams()


@pytest.fixture
def light_params():
    # apparent weight 196 N < u_max, so a constant-force hover is reachable
    return model.ModelParams(m_bar=20.0)
