import numpy as np
import pytest

from graspdiff.dataset import generate_dataset
from graspdiff.gripper import GripperSpec
from graspdiff.models import ModelConfig


@pytest.fixture(scope="session")
def gripper():
    return GripperSpec()


@pytest.fixture(scope="session")
def tiny_model_cfg():
    """Small enough for finite-difference sweeps in float64."""
    return ModelConfig(n_points=16, pc_widths=(8, 12), z_pc_dim=8, z_h_dim=2,
                       block_width=12, n_blocks=2, cond_dim=8, timesteps=20)


@pytest.fixture(scope="session")
def small_objects(gripper):
    """Two quick objects with a handful of verified grasps each."""
    return generate_dataset(2, 12, 64, ("box", "cylinder"), gripper, seed=42)


def finite_difference(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(dict of float64 arrays)."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    err = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = max(err, float((np.abs(a - n) / scale).max()))
    return err
