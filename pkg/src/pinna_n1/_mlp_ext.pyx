# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels. Same contract and parameter layout as ``_mlp_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, fabs, copysign, pow
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef enum:
    MAX_LAYERS = 16


# Activation loops see random signs, so they avoid data-dependent branches:
# one mispredict per element costs more than the GEMMs at these widths.

cdef inline double _relu(double x) noexcept nogil:
    # exact for finite x, keeps NaN so divergence still surfaces
    return 0.5 * (x + fabs(x))


cdef inline double _tanh(double x) noexcept nogil:
    # glibc tanh costs ~4x exp; (e-1)/(e+1) loses digits near 0, so use the series there
    cdef double ax = fabs(x), e, x2
    if ax < 0.05:
        x2 = x * x
        return x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0)))))
    e = exp(2.0 * (ax if ax < 40.0 else 40.0))
    return copysign((e - 1.0) / (e + 1.0), x)


cdef class _Layout:
    cdef Py_ssize_t nl
    cdef Py_ssize_t width[MAX_LAYERS + 1]
    cdef Py_ssize_t woff[MAX_LAYERS]
    cdef Py_ssize_t boff[MAX_LAYERS]
    cdef Py_ssize_t aoff[MAX_LAYERS + 2]
    cdef Py_ssize_t maxw
    cdef Py_ssize_t total

    def __init__(self, sizes):
        cdef Py_ssize_t i, off = 0
        self.nl = len(sizes) - 1
        if self.nl < 1 or self.nl > MAX_LAYERS:
            raise ValueError(f"unsupported layer count {self.nl}")
        if sizes[len(sizes) - 1] != 1:
            raise ValueError("output layer must have width 1")
        self.maxw = 0
        for i in range(self.nl + 1):
            self.width[i] = sizes[i]
            if self.width[i] > self.maxw:
                self.maxw = self.width[i]
        for i in range(self.nl):
            self.woff[i] = off
            off += self.width[i] * self.width[i + 1]
            self.boff[i] = off
            off += self.width[i + 1]
        self.total = off
        # column offsets of each layer in the per-row activation width
        self.aoff[0] = 0
        for i in range(self.nl + 1):
            self.aoff[i + 1] = self.aoff[i] + self.width[i]


cdef inline double* _layer(_Layout lay, double* acts, Py_ssize_t cap, Py_ssize_t l) noexcept nogil:
    # activations are layer-major: layer l is a contiguous cap x width[l] row-major block
    return acts + cap * lay.aoff[l]


cdef void _affine(_Layout lay, const double* theta, double* acts, Py_ssize_t nb, Py_ssize_t cap,
                  Py_ssize_t l) noexcept nogil:
    # layer l+1 pre-activations from layer l
    cdef Py_ssize_t r, j, a = lay.width[l], b = lay.width[l + 1]
    cdef const double* bias = theta + lay.boff[l]
    cdef double* src = _layer(lay, acts, cap, l)
    cdef double* dst = _layer(lay, acts, cap, l + 1)
    cdef int m = <int>b, n = <int>nb, k = <int>a, lda = <int>b, ldb = <int>a, ldc = <int>b
    cdef double one = 1.0
    cdef char nt = b'N'
    for r in range(nb):
        for j in range(b):
            dst[r * b + j] = bias[j]
    # row-major Z = A W  <=>  column-major Z^T = W^T A^T
    dgemm(&nt, &nt, &m, &n, &k, &one, <double*>(theta + lay.woff[l]), &lda, src, &ldb, &one, dst, &ldc)


cdef void _forward_rows(_Layout lay, const double* theta, double* acts, Py_ssize_t nb, Py_ssize_t cap,
                        int act) noexcept nogil:
    # layer 0 of acts is already filled with nb input rows
    cdef Py_ssize_t l, j, size
    cdef double* dst
    for l in range(lay.nl):
        _affine(lay, theta, acts, nb, cap, l)
        if l < lay.nl - 1:
            dst = _layer(lay, acts, cap, l + 1)
            size = nb * lay.width[l + 1]
            if act == 0:
                for j in range(size):
                    dst[j] = _relu(dst[j])
            else:
                for j in range(size):
                    dst[j] = _tanh(dst[j])


cdef double _loss_grad_rows(_Layout lay, const double* theta, double* grad, double* acts,
                            double* d0, double* d1, const double* y, Py_ssize_t nb, Py_ssize_t cap,
                            int act) noexcept nogil:
    cdef Py_ssize_t l, r, i, j, a, b
    cdef double res, loss = 0.0, scale = 2.0 / nb, ai
    cdef double* gW
    cdef double* gb
    cdef const double* W
    cdef double* src
    cdef double* out
    cdef double* delta = d0
    cdef double* prev = d1
    cdef double* tmp
    cdef int m, n, k, lda, ldb, ldc
    cdef double one = 1.0, zero = 0.0
    cdef char nt = b'N', tt = b'T'

    _forward_rows(lay, theta, acts, nb, cap, act)
    out = _layer(lay, acts, cap, lay.nl)
    for r in range(nb):
        res = out[r] - y[r]
        loss += res * res
        delta[r] = scale * res
    for i in range(lay.total):
        grad[i] = 0.0

    for l in range(lay.nl - 1, -1, -1):
        a = lay.width[l]
        b = lay.width[l + 1]
        W = theta + lay.woff[l]
        gW = grad + lay.woff[l]
        gb = grad + lay.boff[l]
        src = _layer(lay, acts, cap, l)
        for r in range(nb):
            for j in range(b):
                gb[j] += delta[r * b + j]
        # row-major gW = A^T D  <=>  column-major gW^T = D^T A
        m = <int>b
        n = <int>a
        k = <int>nb
        lda = <int>b
        ldb = <int>a
        ldc = <int>b
        dgemm(&nt, &tt, &m, &n, &k, &one, delta, &lda, src, &ldb, &zero, gW, &ldc)
        if l > 0:
            # row-major P = D W^T  <=>  column-major P^T = W D^T
            m = <int>a
            n = <int>nb
            k = <int>b
            lda = <int>b
            ldb = <int>b
            ldc = <int>a
            dgemm(&tt, &nt, &m, &n, &k, &one, <double*>W, &lda, delta, &ldb, &zero, prev, &ldc)
            if act == 0:
                for i in range(nb * a):
                    prev[i] = prev[i] * (src[i] > 0.0)
            else:
                for i in range(nb * a):
                    ai = src[i]
                    prev[i] = prev[i] * (1.0 - ai * ai)
            tmp = delta
            delta = prev
            prev = tmp
    return loss / nb


def n_params(sizes):
    return _Layout(list(sizes)).total


def forward(const double[::1] theta, sizes, X, int act):
    cdef _Layout lay = _Layout(list(sizes))
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], chunk = 4096, start, nb, r, i, j, l, size, off
    cdef Py_ssize_t stride = lay.aoff[lay.nl + 1], w0 = lay.width[0], out = lay.aoff[lay.nl]
    if Xv.shape[1] != w0:
        raise ValueError(f"expected {w0} input features, got {Xv.shape[1]}")
    if theta.shape[0] != lay.total:
        raise ValueError("parameter vector does not match layer sizes")
    if n < chunk:
        chunk = n if n > 0 else 1
    arr = np.empty(chunk * stride)
    cdef double[::1] buf = arr
    cdef double* dst
    result = np.empty(n)
    cdef double[::1] res = result
    start = 0
    while start < n:
        nb = n - start
        if nb > chunk:
            nb = chunk
        with nogil:
            for r in range(nb):
                for i in range(w0):
                    buf[r * w0 + i] = Xv[start + r, i]
        for l in range(lay.nl):
            with nogil:
                _affine(lay, &theta[0], &buf[0], nb, chunk, l)
            if l == lay.nl - 1:
                break
            off = chunk * lay.aoff[l + 1]
            size = nb * lay.width[l + 1]
            if act == 0:
                dst = &buf[off]
                with nogil:
                    for j in range(size):
                        dst[j] = _relu(dst[j])
            else:
                # numpy's vectorised tanh beats a scalar libm loop once rows are batched
                np.tanh(arr[off:off + size], out=arr[off:off + size])
        for r in range(nb):
            res[start + r] = buf[chunk * out + r]
        start += nb
    return result


def loss_grad(const double[::1] theta, sizes, X, y, int act):
    cdef _Layout lay = _Layout(list(sizes))
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], r, i, stride = lay.aoff[lay.nl + 1], w0 = lay.width[0]
    if theta.shape[0] != lay.total:
        raise ValueError("parameter vector does not match layer sizes")
    if n == 0 or yv.shape[0] != n or Xv.shape[1] != w0:
        raise ValueError("bad batch shape")
    cdef double[::1] acts = np.empty(n * stride)
    cdef double[::1] d0 = np.empty(n * lay.maxw)
    cdef double[::1] d1 = np.empty(n * lay.maxw)
    grad = np.empty(lay.total)
    cdef double[::1] gv = grad
    cdef double loss
    with nogil:
        for r in range(n):
            for i in range(w0):
                acts[r * w0 + i] = Xv[r, i]
        loss = _loss_grad_rows(lay, &theta[0], &gv[0], &acts[0], &d0[0], &d1[0], &yv[0], n, n, act)
    return loss, grad


def adam_epoch(double[::1] theta, double[::1] m, double[::1] v, sizes, X, y,
               const cnp.int64_t[::1] order, Py_ssize_t batch_size, double lr,
               double beta1, double beta2, double eps, long step, int act):
    cdef _Layout lay = _Layout(list(sizes))
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = order.shape[0], stride = lay.aoff[lay.nl + 1], w0 = lay.width[0]
    cdef Py_ssize_t start, nb, r, i, k, P = lay.total
    if theta.shape[0] != P or m.shape[0] != P or v.shape[0] != P:
        raise ValueError("parameter/state vectors do not match layer sizes")
    if Xv.shape[1] != w0 or yv.shape[0] != Xv.shape[0]:
        raise ValueError("bad training data shape")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    for k in range(n):
        if order[k] < 0 or order[k] >= Xv.shape[0]:
            raise IndexError("order index out of range")
    cdef double[::1] acts = np.empty(batch_size * stride)
    cdef double[::1] d0 = np.empty(batch_size * lay.maxw)
    cdef double[::1] d1 = np.empty(batch_size * lay.maxw)
    cdef double[::1] yb = np.empty(batch_size)
    cdef double[::1] g = np.empty(P)
    cdef double sse = 0.0, loss, c1, c2, gi
    with nogil:
        start = 0
        while start < n:
            nb = n - start
            if nb > batch_size:
                nb = batch_size
            for r in range(nb):
                k = order[start + r]
                yb[r] = yv[k]
                for i in range(w0):
                    acts[r * w0 + i] = Xv[k, i]
            loss = _loss_grad_rows(lay, &theta[0], &g[0], &acts[0], &d0[0], &d1[0], &yb[0], nb, batch_size, act)
            sse += loss * nb
            step += 1
            c1 = 1.0 - pow(beta1, <double>step)
            c2 = 1.0 - pow(beta2, <double>step)
            for i in range(P):
                gi = g[i]
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
                theta[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)
            start += nb
    return step, sse
