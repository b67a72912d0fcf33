import numpy as np
import pytest

from rodfind import LinkingRodSpec


@pytest.fixture
def cuboid_rod_spec():
    return LinkingRodSpec(
        structure={"link": {"main structure": "binary link"},
                   "shaft": {"main structure": "cuboid"}},
        sizes={"shaft": {"length": "large", "width": "medium", "thickness": "medium"},
               "first pivot hole": {"inner diameter": "medium",
                                    "outer diameter": "large", "depth": "large"},
               "second pivot hole": {"inner diameter": "medium",
                                     "outer diameter": "medium", "depth": "small"}})


@pytest.fixture
def arc_rod_spec():
    return LinkingRodSpec(
        structure={"link": {"main structure": "binary link"},
                   "shaft": {"main structure": "arc-shaped vertical slab",
                             "cross section": "rectangle"}},
        sizes={"shaft": {"radius": "large", "length": "medium", "thickness": "large"},
               "first pivot hole": {"inner diameter": "large",
                                    "outer diameter": "large", "depth": "large"},
               "second pivot hole": {"inner diameter": "large",
                                     "outer diameter": "large", "depth": "large"}})


def random_mesh(rng: np.random.Generator, triangles: int):
    from rodfind.geometry import TriangleMesh

    return TriangleMesh(
        rng.normal(size=(triangles, 3)).astype(np.float32),
        rng.normal(scale=10.0, size=(triangles, 3, 3)).astype(np.float32),
        rng.integers(0, 2 ** 16, size=triangles).astype(np.uint16))
