import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from biequiv.fields import BiRigid, PointCloud, RigidTransform
from biequiv.model import ModelConfig, build_model


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_rigid_pair(rng: np.random.Generator, translation: float = 1.0) -> BiRigid:
    return BiRigid(
        RigidTransform(random_rotation(rng), translation * rng.normal(size=3)),
        RigidTransform(random_rotation(rng), translation * rng.normal(size=3)),
    )


def random_cloud(rng: np.random.Generator, n: int, offset: float = 0.0) -> PointCloud:
    return PointCloud(rng.normal(size=(n, 3)) + offset)


@pytest.fixture(scope="session")
def default_model():
    return build_model(ModelConfig(), seed=0)


@pytest.fixture(scope="session")
def small_model():
    # fewer keypoints keeps per-test forwards cheap
    return build_model(ModelConfig(keypoints=16, neighbors=12), seed=0)
