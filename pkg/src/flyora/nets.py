"""Small MLPs and an Adam optimizer built directly on the compute kernels.

Everything here is float64 and deterministic given a seeded Generator. The
networks are two-hidden-layer tanh MLPs; policy and value heads share this
module but are separate parameter sets.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass
class MLPParams:
    """Weights of a 2-hidden-layer tanh MLP. Also used as a gradient container."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w3.shape[1]

    def arrays(self) -> list:
        """Parameter arrays in a fixed order (shared with Adam and checkpoints)."""
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def copy(self) -> "MLPParams":
        return MLPParams(*(a.copy() for a in self.arrays()))

    def allclose(self, other: "MLPParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def to_json(self) -> dict:
        keys = ("w1", "b1", "w2", "b2", "w3", "b3")
        return {k: a.tolist() for k, a in zip(keys, self.arrays())}

    @staticmethod
    def from_json(obj: dict) -> "MLPParams":
        keys = ("w1", "b1", "w2", "b2", "w3", "b3")
        return MLPParams(*(np.asarray(obj[k], dtype=np.float64) for k in keys))


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0):
    """Orthogonal weight matrix of shape (rows, cols), scaled by gain."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    q = q * d
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


# tanh-appropriate gain for the hidden layers
_HIDDEN_GAIN = 5.0 / 3.0


def init_mlp(rng: np.random.Generator, in_dim: int, hidden_dim: int, out_dim: int,
             out_gain: float = 1.0) -> MLPParams:
    """Orthogonal init; small out_gain keeps an initial policy near-uniform."""
    if in_dim < 1 or hidden_dim < 1 or out_dim < 1:
        raise ValueError("all MLP dimensions must be >= 1")
    return MLPParams(
        w1=orthogonal(rng, in_dim, hidden_dim, _HIDDEN_GAIN),
        b1=np.zeros(hidden_dim),
        w2=orthogonal(rng, hidden_dim, hidden_dim, _HIDDEN_GAIN),
        b2=np.zeros(hidden_dim),
        w3=orthogonal(rng, hidden_dim, out_dim, out_gain),
        b3=np.zeros(out_dim),
    )


def _as_batch(x) -> tuple:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ValueError("input must be 1-D or 2-D, got %d-D" % x.ndim)
    return x, False


def forward(params: MLPParams, x):
    """Run the MLP. Returns (out, cache); pass cache to backward().

    A 1-D input is treated as a single row and the output squeezed back.
    """
    xb, squeeze = _as_batch(x)
    if xb.shape[1] != params.in_dim:
        raise ValueError(
            "input width %d does not match network input dim %d"
            % (xb.shape[1], params.in_dim))
    out, h1, h2 = kernels.mlp_forward(
        xb, params.w1, params.b1, params.w2, params.b2, params.w3, params.b3)
    out = np.asarray(out)
    cache = (xb, np.asarray(h1), np.asarray(h2))
    return (out[0] if squeeze else out), cache


def backward(params: MLPParams, cache, grad_out) -> MLPParams:
    """Gradients of sum(out * grad_out) w.r.t. every parameter array."""
    xb, h1, h2 = cache
    g = np.ascontiguousarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    grads = kernels.mlp_backward(xb, h1, h2, g, params.w1, params.w2, params.w3)
    return MLPParams(*(np.asarray(a) for a in grads))


def softmax(logits, mask=None):
    """Softmax over the last axis; entries where mask is False get probability 0.

    The remaining mass is renormalized over the allowed entries.
    """
    z = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != z.shape[-1]:
            raise ValueError("mask length %d != logits length %d"
                             % (mask.shape[-1], z.shape[-1]))
        if not mask.any():
            raise ValueError("softmax mask excludes every entry")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    if mask is not None:
        e = np.where(mask, e, 0.0)
    total = e.sum(axis=-1, keepdims=True)
    return e / total


class Adam:
    """Plain Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params: list, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list, maximize: bool = False) -> None:
        """Apply one update. With maximize=True, ascends the gradient."""
        if len(grads) != len(self.params):
            raise ValueError("expected %d gradient arrays, got %d"
                             % (len(self.params), len(grads)))
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        sign = -1.0 if maximize else 1.0
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = sign * g
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
