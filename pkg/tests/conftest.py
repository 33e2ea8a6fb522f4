import numpy as np
import pytest

from segloop.volume import BinaryMask, VoxelGrid

from oracles import random_blob_mask


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def make_grid(gen, dims=(4, 5, 6), dtype=np.float32, spacing=(1.0, 1.0, 1.0)):
    if np.dtype(dtype) == np.uint8:
        data = gen.integers(0, 256, size=dims, dtype=np.uint8)
    elif np.dtype(dtype) == np.int16:
        data = gen.integers(-32768, 32768, size=dims, dtype=np.int16)
    else:
        data = gen.standard_normal(dims).astype(np.float32)
    return VoxelGrid(data, spacing)


def make_mask(gen, dims=(12, 12, 12), spacing=(1.0, 1.0, 1.0), p=0.3, smooth=1.2):
    return BinaryMask.from_bool(random_blob_mask(gen, dims, p=p, smooth=smooth), spacing)
