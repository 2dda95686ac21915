import importlib.resources as ir

import numpy as np
import pytest

from ramiperiod import (build_base_mesh, build_weight_set, hyperelliptic_basis,
                        lift_to_cover, load_curve)


def curve_path(name):
    return str(ir.files("ramiperiod") / "data" / f"{name}.json")


@pytest.fixture(scope="session")
def torus_cover():
    return load_curve(curve_path("torus"))


@pytest.fixture(scope="session")
def lawson_cover():
    return load_curve(curve_path("lawson"))


def make_pipeline(cover, sampler="fibonacci", n=500, seed=0, adapt=True,
                  weight_mode="chart"):
    tri = build_base_mesh(cover, sampler, n, seed=seed, adapt=adapt)
    mesh = lift_to_cover(tri, cover)
    weights = build_weight_set(mesh, weight_mode)
    cuts = hyperelliptic_basis(mesh, cover)
    return mesh, weights, cuts


@pytest.fixture(scope="session")
def torus_small(torus_cover):
    """Shared 500-point adapted Fibonacci torus pipeline."""
    return make_pipeline(torus_cover, n=500)


@pytest.fixture(scope="session")
def lawson_small(lawson_cover):
    return make_pipeline(lawson_cover, n=700)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
