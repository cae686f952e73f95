import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def direct_conv2d(x, w, b, stride, padding, groups):
    """Loop-based reference convolution (the contract definition)."""
    n, cin, h, wd = x.shape
    d2, cin_g, k, _ = w.shape
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, d2, oh, ow), dtype=x.dtype)
    cout_g = d2 // groups
    for ni in range(n):
        for o in range(d2):
            gidx = o // cout_g
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin_g):
                        c = gidx * cin_g + ci
                        for a in range(k):
                            for bb in range(k):
                                acc += xp[ni, c, i * stride + a, j * stride + bb] * w[o, ci, a, bb]
                    out[ni, o, i, j] = acc
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out
