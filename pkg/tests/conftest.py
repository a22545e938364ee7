import numpy as np
import pytest

from gcabem.cluster import build_block_tree, build_cluster_tree
from gcabem.gca import GcaParams, build_interpolation_operators
from gcabem.kernels import KernelSpec
from gcabem.mesh import build_sphere_mesh


@pytest.fixture(scope="session")
def sphere2():
    return build_sphere_mesh(2)


@pytest.fixture(scope="session")
def sphere3():
    return build_sphere_mesh(3)


@pytest.fixture(scope="session")
def trees3(sphere3):
    tree = build_cluster_tree(sphere3, 16)
    return tree, build_block_tree(tree, tree, 2.0)


@pytest.fixture(scope="session")
def slp():
    return KernelSpec("laplace", "single")


@pytest.fixture(scope="session")
def ops3(sphere3, trees3, slp):
    """Interpolation operators for the level-3 shared-tree block structure."""
    _, block_tree = trees3
    ops, _ = build_interpolation_operators(sphere3, block_tree, slp,
                                           GcaParams(epsilon=1e-6))
    return ops


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
