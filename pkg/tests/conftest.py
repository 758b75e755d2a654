import numpy as np
import pytest

from ecfnet.config import ModelConfig, PhantomSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Two-stage float64 model small enough for exhaustive checks"""
    return ModelConfig(base_channels=4, stages=2, residual_blocks_per_stage=1, attention_heads=2,
                       scale_factor=2, dtype="float64")


@pytest.fixture
def small_spec():
    return PhantomSpec(size=16, ellipses=5, min_axis=0.1, max_axis=0.4, seed=7)


@pytest.fixture
def conv_oracle():
    """Direct nested-loop cross-correlation"""
    def run(x, w, b=None, stride=1, padding=0):
        B, Cin, H, W = x.shape
        Cout, _, kh, kw = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        Ho = (H + 2 * padding - kh) // stride + 1
        Wo = (W + 2 * padding - kw) // stride + 1
        out = np.zeros((B, Cout, Ho, Wo))
        for n in range(B):
            for o in range(Cout):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = 0.0
                        for c in range(Cin):
                            for u in range(kh):
                                for v in range(kw):
                                    acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                        out[n, o, i, j] = acc + (b[o] if b is not None else 0.0)
        return out
    return run
