"""Minimal differentiable operator set with explicit backward passes.

Tensors are plain float64 numpy arrays.  Every layer caches what its
backward pass needs on the instance, so a layer object serves one
forward/backward pair at a time (which is how the fixed training pipeline
uses them).  Gradients accumulate into Param.grad until sgd_update zeroes
them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IndexOutOfRange,
    InsufficientStatistics,
    MissingGradient,
    ShapeMismatch,
)


@dataclass
class Param:
    """A named trainable tensor with its gradient and momentum buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    mom: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.mom is None:
            self.mom = np.zeros_like(self.value)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    a = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    """Row-wise softmax with max subtraction for stability."""
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax_backward(dout, y, axis=-1):
    """Backward through softmax given its output y."""
    dot = np.sum(dout * y, axis=axis, keepdims=True)
    return y * (dout - dot)


# ---------------------------------------------------------------------------
# conv / pool / norm / linear layers
# ---------------------------------------------------------------------------

def _im2col(x, kh, kw, stride, ph, pw):
    n, c, h, w = x.shape
    hp = h + 2 * ph
    wp = w + 2 * pw
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.zeros((n, c, hp, wp))
    xp[:, :, ph:ph + h, pw:pw + w] = x
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(dcols, x_shape, kh, kw, stride, ph, pw, ho, wo):
    n, c, h, w = x_shape
    hp = h + 2 * ph
    wp = w + 2 * pw
    dxp = np.zeros((n, c, hp, wp))
    dc = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dc[:, :, i, j]
    return dxp[:, :, ph:ph + h, pw:pw + w]


class Conv2d:
    """Cross-correlation over (N, C, H, W) with symmetric-or-not padding."""

    def __init__(self, cin, cout, k=3, stride=1, pad=1, rng=None, name="conv",
                 zero_init=False):
        self.k = k
        self.stride = stride
        self.pad = (pad, pad) if np.isscalar(pad) else tuple(pad)
        fan_in = cin * k * k
        if zero_init:
            w = np.zeros((cout, cin, k, k))
        else:
            w = uniform_init(rng, (cout, cin, k, k), fan_in)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(cout))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.weight.value.shape[1]:
            raise ShapeMismatch(f"conv input shape {x.shape} incompatible with "
                                f"kernel {self.weight.value.shape}")
        cols, ho, wo = _im2col(x, self.k, self.k, self.stride, *self.pad)
        wmat = self.weight.value.reshape(self.weight.value.shape[0], -1)
        out = np.einsum("ok,nkp->nop", wmat, cols, optimize=True)
        out += self.bias.value[None, :, None]
        self._cache = (x.shape, cols, ho, wo)
        return out.reshape(x.shape[0], -1, ho, wo)

    def backward(self, dout, need_dx=True):
        x_shape, cols, ho, wo = self._cache
        n = x_shape[0]
        cout = dout.shape[1]
        dflat = dout.reshape(n, cout, ho * wo)
        wmat = self.weight.value.reshape(cout, -1)
        self.weight.grad += np.einsum("nop,nkp->ok", dflat, cols,
                                      optimize=True).reshape(self.weight.value.shape)
        self.bias.grad += dflat.sum(axis=(0, 2))
        if not need_dx:
            return None
        dcols = np.einsum("ok,nop->nkp", wmat, dflat, optimize=True)
        return _col2im(dcols, x_shape, self.k, self.k, self.stride, *self.pad, ho, wo)


class MaxPool2d:
    """Max pooling; padding cells count as -inf, gradient routes to the argmax."""

    def __init__(self, k=2, stride=1, pad=(0, 0)):
        self.k = k
        self.stride = stride
        self.pad = (pad, pad) if np.isscalar(pad) else tuple(pad)

    def params(self):
        return []

    def forward(self, x):
        n, c, h, w = x.shape
        ph, pw = self.pad
        hp, wp = h + 2 * ph, w + 2 * pw
        if hp < self.k or wp < self.k:
            raise ShapeMismatch(f"pool window {self.k} exceeds padded input {hp}x{wp}")
        xp = np.full((n, c, hp, wp), -np.inf)
        xp[:, :, ph:ph + h, pw:pw + w] = x
        ho = (hp - self.k) // self.stride + 1
        wo = (wp - self.k) // self.stride + 1
        wins = np.empty((n, c, ho, wo, self.k * self.k))
        idx = 0
        for i in range(self.k):
            for j in range(self.k):
                wins[..., idx] = xp[:, :, i:i + self.stride * ho:self.stride,
                                    j:j + self.stride * wo:self.stride]
                idx += 1
        arg = np.argmax(wins, axis=-1)  # first occurrence on ties
        out = np.take_along_axis(wins, arg[..., None], axis=-1)[..., 0]
        self._cache = ((n, c, h, w), arg, ho, wo)
        return out

    def backward(self, dout):
        x_shape, arg, ho, wo = self._cache
        n, c, h, w = x_shape
        ph, pw = self.pad
        dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
        di = arg // self.k
        dj = arg % self.k
        ii = di + self.stride * np.arange(ho)[None, None, :, None]
        jj = dj + self.stride * np.arange(wo)[None, None, None, :]
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(dxp, (nn, cc, ii, jj), dout)
        return dxp[:, :, ph:ph + h, pw:pw + w]


class BatchNorm2d:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, c, eps=1e-5, momentum=0.1, name="bn"):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(f"{name}.gamma", np.ones(c))
        self.beta = Param(f"{name}.beta", np.zeros(c))
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.gamma.value.size:
            raise ShapeMismatch(f"bn expects (N, {self.gamma.value.size}, H, W), "
                                f"got {x.shape}")
        if train:
            n, _, h, w = x.shape
            count = n * h * w
            if count < 2:
                raise InsufficientStatistics("batchnorm needs >= 2 elements per channel")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        out = self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]
        self._cache = (xhat, inv, train, x.shape)
        return out

    def backward(self, dout):
        xhat, inv, train, shape = self._cache
        self.gamma.grad += np.sum(dout * xhat, axis=(0, 2, 3))
        self.beta.grad += np.sum(dout, axis=(0, 2, 3))
        dxhat = dout * self.gamma.value[None, :, None, None]
        if not train:
            return dxhat * inv[None, :, None, None]
        n, _, h, w = shape
        m = n * h * w
        term = dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True) \
            - xhat * np.mean(dxhat * xhat, axis=(0, 2, 3), keepdims=True)
        return term * inv[None, :, None, None]

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Linear:
    def __init__(self, din, dout, rng=None, name="fc", zero_init=False):
        if zero_init:
            w = np.zeros((din, dout))
        else:
            w = uniform_init(rng, (din, dout), din)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(dout))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weight.value.shape[0]:
            raise ShapeMismatch(f"linear input {x.shape} vs weight "
                                f"{self.weight.value.shape}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, dout):
        self.weight.grad += self._x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.value.T


class GRUCell:
    """Standard GRU: z/r gates, candidate with reset-gated state.

    h_new = (1 - z) * tanh(W_h [x, r*h] + b_h) + z * h_prev, with
    z = sigmoid(W_z [x, h] + b_z), r = sigmoid(W_r [x, h] + b_r).
    """

    def __init__(self, dx, dh, rng=None, name="gru"):
        fan = dx + dh
        self.dx = dx
        self.dh = dh
        self.wz = Param(f"{name}.wz", uniform_init(rng, (fan, dh), fan))
        self.bz = Param(f"{name}.bz", np.zeros(dh))
        self.wr = Param(f"{name}.wr", uniform_init(rng, (fan, dh), fan))
        self.br = Param(f"{name}.br", np.zeros(dh))
        self.wh = Param(f"{name}.wh", uniform_init(rng, (fan, dh), fan))
        self.bh = Param(f"{name}.bh", np.zeros(dh))

    def params(self):
        return [self.wz, self.bz, self.wr, self.br, self.wh, self.bh]

    def forward(self, x, h_prev):
        if x.ndim != 2 or x.shape[1] != self.dx or h_prev.shape != (x.shape[0], self.dh):
            raise ShapeMismatch(f"gru got x {x.shape}, h {h_prev.shape}, "
                                f"expected (N,{self.dx}) and (N,{self.dh})")
        xh = np.concatenate([x, h_prev], axis=1)
        z = sigmoid(xh @ self.wz.value + self.bz.value)
        r = sigmoid(xh @ self.wr.value + self.br.value)
        xrh = np.concatenate([x, r * h_prev], axis=1)
        hbar = np.tanh(xrh @ self.wh.value + self.bh.value)
        h_new = (1.0 - z) * hbar + z * h_prev
        return h_new, (x, h_prev, xh, z, r, xrh, hbar)

    def backward(self, dh_new, cache):
        x, h_prev, xh, z, r, xrh, hbar = cache
        dz = dh_new * (h_prev - hbar)
        dhbar = dh_new * (1.0 - z)
        dh_prev = dh_new * z

        da_h = dhbar * (1.0 - hbar * hbar)
        self.wh.grad += xrh.T @ da_h
        self.bh.grad += da_h.sum(axis=0)
        dxrh = da_h @ self.wh.value.T
        dx = dxrh[:, :self.dx].copy()
        drh = dxrh[:, self.dx:]
        dr = drh * h_prev
        dh_prev += drh * r

        da_z = dz * z * (1.0 - z)
        self.wz.grad += xh.T @ da_z
        self.bz.grad += da_z.sum(axis=0)
        dxh = da_z @ self.wz.value.T

        da_r = dr * r * (1.0 - r)
        self.wr.grad += xh.T @ da_r
        self.br.grad += da_r.sum(axis=0)
        dxh += da_r @ self.wr.value.T

        dx += dxh[:, :self.dx]
        dh_prev += dxh[:, self.dx:]
        return dx, dh_prev


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def smooth_l1(pred, target, beta=1.0, reduction="mean"):
    """Smooth-L1 loss and its gradient w.r.t. pred.

    Per element: 0.5 d^2 / beta if |d| < beta else |d| - 0.5 beta.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"smooth_l1 shapes differ: {pred.shape} vs {target.shape}")
    d = pred - target
    ad = np.abs(d)
    quad = ad < beta
    elems = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    grad = np.where(quad, d / beta, np.sign(d))
    if reduction == "mean":
        return float(elems.mean()), grad / d.size
    if reduction == "sum":
        return float(elems.sum()), grad
    raise ValueError(f"unknown reduction {reduction!r}")


def nll_loss(logp, targets):
    """Mean negative log likelihood over T rows; gradient w.r.t. logp."""
    logp = np.asarray(logp, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logp.ndim != 2 or logp.shape[0] != t.size:
        raise ShapeMismatch(f"nll got logp {logp.shape} for {t.size} targets")
    if np.any(t < 0) or np.any(t >= logp.shape[1]):
        raise IndexOutOfRange("target index outside class range")
    n = t.size
    loss = -float(logp[np.arange(n), t].mean())
    grad = np.zeros_like(logp)
    grad[np.arange(n), t] = -1.0 / n
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer and gradient checking
# ---------------------------------------------------------------------------

def sgd_update(params, lr, momentum=0.9, weight_decay=0.0):
    """In-place SGD with classic momentum and decoupled-from-nothing L2."""
    for p in params:
        if p.grad is None or p.grad.shape != p.value.shape:
            raise MissingGradient(f"parameter {p.name} has no usable gradient")
        p.mom *= momentum
        p.mom += p.grad + weight_decay * p.value
        p.value -= lr * p.mom
        p.grad[...] = 0.0


def grad_check(fn, arrays, eps=1e-5, max_entries=64, rng=None):
    """Compare analytic gradients against central finite differences.

    fn() must evaluate the scalar loss from the current contents of
    `arrays` and return (loss, grads) with grads aligned to `arrays`.
    Large tensors are subsampled.  Returns the max relative error per array.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    _, grads = fn()
    errs = []
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = fn()
            flat[i] = orig - eps
            lm, _ = fn()
            flat[i] = orig
            num = (lp - lm) / (2.0 * eps)
            ana = gflat[i]
            rel = abs(num - ana) / max(1.0, abs(num), abs(ana))
            worst = max(worst, rel)
        errs.append(worst)
    return errs
