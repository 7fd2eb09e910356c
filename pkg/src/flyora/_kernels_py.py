"""Pure-numpy MLP kernels; fallback when the compiled extension is absent.

Both backends implement the same two functions over float64 C-contiguous
arrays: a forward pass through a two-hidden-layer tanh MLP, and the
matching backward pass.
"""

import numpy as np


def mlp_forward(x, w1, b1, w2, b2, w3, b3):
    """Forward pass. Returns (out, h1, h2); h1/h2 are the tanh activations."""
    h1 = np.tanh(x @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    out = h2 @ w3 + b3
    return out, h1, h2


def mlp_backward(x, h1, h2, grad_out, w1, w2, w3):
    """Backward pass for mlp_forward; grad_out is d(loss)/d(out).

    Returns (gw1, gb1, gw2, gb2, gw3, gb3).
    """
    gw3 = h2.T @ grad_out
    gb3 = grad_out.sum(axis=0)
    dh2 = (grad_out @ w3.T) * (1.0 - h2 * h2)
    gw2 = h1.T @ dh2
    gb2 = dh2.sum(axis=0)
    dh1 = (dh2 @ w2.T) * (1.0 - h1 * h1)
    gw1 = x.T @ dh1
    gb1 = dh1.sum(axis=0)
    return gw1, gb1, gw2, gb2, gw3, gb3
