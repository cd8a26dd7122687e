import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from rbcontrol import FullOrderModel, Problem


@pytest.fixture(scope="session", autouse=True)
def pinned_blas():
    # small-matrix workloads throughout; multithreaded BLAS only thrashes
    with threadpool_limits(limits=1, user_api="blas"):
        yield


@pytest.fixture(scope="session")
def make_fom():
    cache = {}

    def _make(problem, nc, n_subdomains=3, beta=1e-2):
        key = (problem, nc, n_subdomains, beta)
        if key not in cache:
            cache[key] = FullOrderModel.build(
                problem, nc, n_subdomains=n_subdomains, beta=beta
            )
        return cache[key]

    return _make


@pytest.fixture(scope="session")
def diffusion_nc2(make_fom):
    return make_fom(Problem.DIFFUSION, 2, n_subdomains=2)


@pytest.fixture(scope="session")
def diffusion_nc3(make_fom):
    return make_fom(Problem.DIFFUSION, 3, n_subdomains=3)


@pytest.fixture(scope="session")
def graetz_nc3(make_fom):
    return make_fom(Problem.GRAETZ, 3)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
