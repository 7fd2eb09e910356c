# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled MLP kernels. Same contract as _kernels_py.

Hand-written loops only pay off while the operands are small enough that
BLAS/ufunc dispatch overhead dominates the arithmetic, which is exactly the
one-observation policy evaluation inside episode rollouts. Larger batches
(the optimizer updates) delegate to the numpy implementation, which wins
there. The crossover row count was measured with
benchmarks/bench_kernels.py.
"""

import numpy as np

from . import _kernels_py

DELEGATE_ROWS = 2


cdef void _affine(const double[:, ::1] x, const double[:, ::1] w,
                  const double[::1] bias, double[:, ::1] out):
    """out = x @ w + bias, accumulated row-wise over contiguous memory."""
    cdef Py_ssize_t nb = x.shape[0]
    cdef Py_ssize_t ni = x.shape[1]
    cdef Py_ssize_t no = w.shape[1]
    cdef Py_ssize_t b, i, j
    cdef double v
    for b in range(nb):
        for j in range(no):
            out[b, j] = bias[j]
        for i in range(ni):
            v = x[b, i]
            for j in range(no):
                out[b, j] += v * w[i, j]


cdef void _grad_acc(const double[:, ::1] a, const double[:, ::1] gout,
                    double[:, ::1] gw, double[::1] gb):
    """gw += a.T @ gout and gb += gout.sum(axis=0)."""
    cdef Py_ssize_t nb = a.shape[0]
    cdef Py_ssize_t ni = a.shape[1]
    cdef Py_ssize_t no = gout.shape[1]
    cdef Py_ssize_t b, i, j
    cdef double v
    for b in range(nb):
        for i in range(ni):
            v = a[b, i]
            for j in range(no):
                gw[i, j] += v * gout[b, j]
        for j in range(no):
            gb[j] += gout[b, j]


cdef void _tanh_backprop(const double[:, ::1] gout, const double[:, ::1] wt,
                         const double[:, ::1] h, double[:, ::1] dh):
    """dh = (gout @ wt-as-w.T) * (1 - h*h); wt is w.T made C-contiguous."""
    cdef Py_ssize_t nb = gout.shape[0]
    cdef Py_ssize_t no = gout.shape[1]
    cdef Py_ssize_t ni = dh.shape[1]
    cdef Py_ssize_t b, i, j
    cdef double v
    for b in range(nb):
        for i in range(ni):
            dh[b, i] = 0.0
        for j in range(no):
            v = gout[b, j]
            for i in range(ni):
                dh[b, i] += v * wt[j, i]
        for i in range(ni):
            dh[b, i] *= 1.0 - h[b, i] * h[b, i]


def mlp_forward(x, w1, b1, w2, b2, w3, b3):
    """Forward pass. Returns (out, h1, h2); h1/h2 are the tanh activations."""
    if x.shape[0] >= DELEGATE_ROWS:
        return _kernels_py.mlp_forward(x, w1, b1, w2, b2, w3, b3)
    nb = x.shape[0]
    h1 = np.empty((nb, w1.shape[1]))
    _affine(x, w1, b1, h1)
    np.tanh(h1, out=h1)
    h2 = np.empty((nb, w2.shape[1]))
    _affine(h1, w2, b2, h2)
    np.tanh(h2, out=h2)
    out = np.empty((nb, w3.shape[1]))
    _affine(h2, w3, b3, out)
    return out, h1, h2


def mlp_backward(x, h1, h2, grad_out, w1, w2, w3):
    """Backward pass for mlp_forward; grad_out is d(loss)/d(out).

    Returns (gw1, gb1, gw2, gb2, gw3, gb3).
    """
    if x.shape[0] >= DELEGATE_ROWS:
        return _kernels_py.mlp_backward(x, h1, h2, grad_out, w1, w2, w3)
    gw3 = np.zeros((w3.shape[0], w3.shape[1]))
    gb3 = np.zeros(w3.shape[1])
    _grad_acc(h2, grad_out, gw3, gb3)
    dh2 = np.empty((x.shape[0], w2.shape[1]))
    _tanh_backprop(grad_out, np.ascontiguousarray(w3.T), h2, dh2)
    gw2 = np.zeros((w2.shape[0], w2.shape[1]))
    gb2 = np.zeros(w2.shape[1])
    _grad_acc(h1, dh2, gw2, gb2)
    dh1 = np.empty((x.shape[0], w1.shape[1]))
    _tanh_backprop(dh2, np.ascontiguousarray(w2.T), h1, dh1)
    gw1 = np.zeros((w1.shape[0], w1.shape[1]))
    gb1 = np.zeros(w1.shape[1])
    _grad_acc(x, dh1, gw1, gb1)
    return gw1, gb1, gw2, gb2, gw3, gb3
