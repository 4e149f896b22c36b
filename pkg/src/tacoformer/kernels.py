"""Hot numeric kernels, each in a numba and a pure-numpy variant.

Dispatch goes through the tiny wrappers at the bottom, which consult
backend.active_backend() per call so tests and the benchmark can flip
implementations at runtime. All kernels are float64 in, float64 out.
"""

import numpy as np

from . import backend

# ---------------------------------------------------------------- numpy ----


def softmax_last_np(x):
    """Row-stabilized softmax over the last axis."""
    out = np.empty_like(x)
    np.subtract(x, x.max(axis=-1, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)
    return out


def softmax_last_bwd_np(y, gy):
    dot = np.einsum("...c,...c->...", y, gy)
    return y * (gy - dot[..., None])


def layernorm_np(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.einsum("...c,...c->...", xc, xc)[..., None] / x.shape[-1]
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd * gain + bias
    return y, mu, rstd


def layernorm_bwd_np(x, mu, rstd, gain, gy):
    d = x.shape[-1]
    xhat = (x - mu) * rstd
    gyg = gy * gain
    m1 = gyg.mean(axis=-1, keepdims=True)
    m2 = np.einsum("...c,...c->...", gyg, xhat)[..., None] / d
    gx = (gyg - m1 - xhat * m2) * rstd
    ggain = (gy * xhat).reshape(-1, d).sum(axis=0)
    gbias = gy.reshape(-1, d).sum(axis=0)
    return gx, ggain, gbias


def adam_update_np(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / bc1
    vhat = v / bc2
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


def zscore_rows_np(x, eps=1e-12):
    """Z-score each row; rows with std < eps map to zeros."""
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    out = np.where(sd < eps, 0.0, (x - mu) / np.where(sd < eps, 1.0, sd))
    return out


# ---------------------------------------------------------------- numba ----

if backend.have_numba():
    from numba import njit

    @njit(cache=True)
    def _softmax_shift_nb(x2, out2):
        rows, cols = x2.shape
        for r in range(rows):
            m = x2[r, 0]
            for c in range(1, cols):
                if x2[r, c] > m:
                    m = x2[r, c]
            for c in range(cols):
                out2[r, c] = x2[r, c] - m

    @njit(cache=True)
    def _softmax_norm_nb(out2):
        rows, cols = out2.shape
        for r in range(rows):
            s = 0.0
            for c in range(cols):
                s += out2[r, c]
            inv = 1.0 / s
            for c in range(cols):
                out2[r, c] *= inv

    def softmax_last_nb(x):
        x = np.ascontiguousarray(x)
        out = np.empty_like(x)
        x2 = x.reshape(-1, x.shape[-1])
        out2 = out.reshape(-1, x.shape[-1])
        _softmax_shift_nb(x2, out2)
        # np.exp is SIMD-vectorized; a scalar libm exp inside the jit loop is
        # ~3x slower on hosts without SVML, so the exp pass stays in numpy.
        np.exp(out2, out=out2)
        _softmax_norm_nb(out2)
        return out

    @njit(cache=True)
    def _softmax_bwd_nb(y2, gy2, gx2):
        rows, cols = y2.shape
        for r in range(rows):
            dot = 0.0
            for c in range(cols):
                dot += y2[r, c] * gy2[r, c]
            for c in range(cols):
                gx2[r, c] = y2[r, c] * (gy2[r, c] - dot)

    def softmax_last_bwd_nb(y, gy):
        y = np.ascontiguousarray(y)
        gy = np.ascontiguousarray(gy)
        gx = np.empty_like(y)
        cols = y.shape[-1]
        _softmax_bwd_nb(y.reshape(-1, cols), gy.reshape(-1, cols),
                        gx.reshape(-1, cols))
        return gx

    @njit(cache=True)
    def _layernorm_nb(x2, gain, bias, eps, y2, mu1, rstd1):
        rows, cols = x2.shape
        inv_d = 1.0 / cols
        for r in range(rows):
            s = 0.0
            for c in range(cols):
                s += x2[r, c]
            mu = s * inv_d
            var = 0.0
            for c in range(cols):
                t = x2[r, c] - mu
                var += t * t
            var *= inv_d
            rstd = 1.0 / np.sqrt(var + eps)
            mu1[r] = mu
            rstd1[r] = rstd
            for c in range(cols):
                y2[r, c] = (x2[r, c] - mu) * rstd * gain[c] + bias[c]

    def layernorm_nb(x, gain, bias, eps):
        x = np.ascontiguousarray(x)
        d = x.shape[-1]
        y = np.empty_like(x)
        lead = x.shape[:-1]
        mu = np.empty(lead + (1,))
        rstd = np.empty(lead + (1,))
        _layernorm_nb(x.reshape(-1, d), gain, bias, eps,
                      y.reshape(-1, d), mu.reshape(-1), rstd.reshape(-1))
        return y, mu, rstd

    @njit(cache=True)
    def _layernorm_bwd_nb(x2, mu1, rstd1, gain, gy2, gx2, ggain, gbias):
        rows, cols = x2.shape
        inv_d = 1.0 / cols
        for r in range(rows):
            mu = mu1[r]
            rstd = rstd1[r]
            m1 = 0.0
            m2 = 0.0
            for c in range(cols):
                xh = (x2[r, c] - mu) * rstd
                gg = gy2[r, c] * gain[c]
                m1 += gg
                m2 += gg * xh
            m1 *= inv_d
            m2 *= inv_d
            for c in range(cols):
                xh = (x2[r, c] - mu) * rstd
                gx2[r, c] = (gy2[r, c] * gain[c] - m1 - xh * m2) * rstd
                ggain[c] += gy2[r, c] * xh
                gbias[c] += gy2[r, c]

    def layernorm_bwd_nb(x, mu, rstd, gain, gy):
        x = np.ascontiguousarray(x)
        gy = np.ascontiguousarray(gy)
        d = x.shape[-1]
        gx = np.empty_like(x)
        ggain = np.zeros(d)
        gbias = np.zeros(d)
        _layernorm_bwd_nb(x.reshape(-1, d), mu.reshape(-1), rstd.reshape(-1),
                          gain, gy.reshape(-1, d), gx.reshape(-1, d),
                          ggain, gbias)
        return gx, ggain, gbias

    @njit(cache=True)
    def _adam_nb(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
        for i in range(theta.size):
            mi = beta1 * m[i] + (1.0 - beta1) * g[i]
            vi = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            m[i] = mi
            v[i] = vi
            theta[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)

    def adam_update_nb(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
        _adam_nb(theta.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                 m.reshape(-1), v.reshape(-1), lr, beta1, beta2, eps, bc1, bc2)

    @njit(cache=True)
    def _zscore_rows_nb(x, out, eps):
        rows, cols = x.shape
        inv = 1.0 / cols
        for r in range(rows):
            s = 0.0
            for c in range(cols):
                s += x[r, c]
            mu = s * inv
            var = 0.0
            for c in range(cols):
                t = x[r, c] - mu
                var += t * t
            sd = np.sqrt(var * inv)
            if sd < eps:
                for c in range(cols):
                    out[r, c] = 0.0
            else:
                rsd = 1.0 / sd
                for c in range(cols):
                    out[r, c] = (x[r, c] - mu) * rsd

    def zscore_rows_nb(x, eps=1e-12):
        x = np.ascontiguousarray(x)
        out = np.empty_like(x)
        _zscore_rows_nb(x, out, eps)
        return out


# -------------------------------------------------------------- dispatch ----


def softmax_last(x):
    if backend.active_backend() == "numba":
        return softmax_last_nb(x)
    return softmax_last_np(x)


def softmax_last_bwd(y, gy):
    if backend.active_backend() == "numba":
        return softmax_last_bwd_nb(y, gy)
    return softmax_last_bwd_np(y, gy)


def layernorm(x, gain, bias, eps):
    if backend.active_backend() == "numba":
        return layernorm_nb(x, gain, bias, eps)
    return layernorm_np(x, gain, bias, eps)


def layernorm_bwd(x, mu, rstd, gain, gy):
    if backend.active_backend() == "numba":
        return layernorm_bwd_nb(x, mu, rstd, gain, gy)
    return layernorm_bwd_np(x, mu, rstd, gain, gy)


def adam_update(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    if backend.active_backend() == "numba":
        adam_update_nb(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2)
    else:
        adam_update_np(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2)


def zscore_rows(x, eps=1e-12):
    if backend.active_backend() == "numba":
        return zscore_rows_nb(x, eps)
    return zscore_rows_np(x, eps)
