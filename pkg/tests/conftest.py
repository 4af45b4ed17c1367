import numpy as np
import pytest

from mtgee.model import ClusterSeries, get_link
from mtgee.simgen import substream


def random_series(rng, n=20, m=3, p=2, scale=0.5):
    """Small series with exogenous (past-measurable) regressors."""
    Xs = rng.normal(scale=scale, size=(n, m, p))
    ys = rng.normal(size=(n, m))
    return ClusterSeries(ys=ys, Xs=Xs)


def glm_series(rng, link_kind, beta0, n=60, m=3, x_scale=0.4):
    """Simulate from the conditional-moment model with exogenous regressors.

    identity: gaussian noise with unit variance; logistic: Bernoulli;
    exponential: Poisson (variance = mean under the canonical log link).
    """
    link = get_link(link_kind)
    p = len(beta0)
    Xs = rng.normal(scale=x_scale, size=(n, m, p))
    thetas = Xs @ np.asarray(beta0, dtype=np.float64)
    mu = link.eval(thetas)
    if link_kind == "identity":
        ys = mu + rng.normal(size=(n, m))
    elif link_kind == "logistic":
        ys = (rng.uniform(size=(n, m)) < mu).astype(np.float64)
    else:
        ys = rng.poisson(mu).astype(np.float64)
    return ClusterSeries(ys=ys, Xs=Xs)


@pytest.fixture
def rng():
    return substream(20240311, 0)
