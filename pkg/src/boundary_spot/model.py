"""BPDN offset regressor, attention-GRU recognizer, losses and training.

The boundary point head regresses normalized offsets from the default
points of an 8x64 rotated crop.  The recognizer encodes a rectified 8x64
crop into a length-64 feature sequence and decodes it with an attention
GRU over a 63-symbol charset (digits, a-z, A-Z, end-of-sequence).
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from . import geometry, micronet as mn
from .errors import EmptyTarget, IndexOutOfRange, ShapeMismatch
from .micronet import BatchNorm2d, Conv2d, GRUCell, Linear, Param


@dataclass(frozen=True)
class Charset:
    symbols: str = string.digits + string.ascii_lowercase + string.ascii_uppercase

    @property
    def eos(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> np.ndarray:
        """Symbol indices for text, terminated with EOS."""
        try:
            idx = [self.symbols.index(ch) for ch in text]
        except ValueError as exc:
            raise IndexOutOfRange(f"character outside charset in {text!r}") from exc
        return np.array(idx + [self.eos], dtype=np.int64)

    def decode(self, indices) -> str:
        out = []
        for i in indices:
            if i == self.eos:
                break
            out.append(self.symbols[int(i)])
        return "".join(out)


CHARSET = Charset()


@dataclass
class DecodeResult:
    text: str
    probs: np.ndarray      # (T, |S|) per-step distributions
    attention: np.ndarray  # (T, n) attention rows
    score: float


# ---------------------------------------------------------------------------
# boundary point head
# ---------------------------------------------------------------------------

class BpdnModel:
    """Four stacked 3x3 conv+BN+relu layers and one FC emitting 4K offsets.

    The final layer starts at zero so an untrained model predicts exactly
    the default points.
    """

    def __init__(self, k=7, in_h=8, in_w=64, width=32, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.k = k
        self.in_h = in_h
        self.in_w = in_w
        self.convs = []
        self.bns = []
        cin = 1
        for i in range(4):
            self.convs.append(Conv2d(cin, width, 3, 1, 1, rng=rng, name=f"bpdn.conv{i}"))
            self.bns.append(BatchNorm2d(width, name=f"bpdn.bn{i}"))
            cin = width
        self.fc = Linear(width * in_h * in_w, 4 * k, name="bpdn.fc", zero_init=True)

    def params(self):
        out = []
        for c, b in zip(self.convs, self.bns):
            out += c.params() + b.params()
        return out + self.fc.params()

    def forward(self, crops, train=False):
        """(N, 1, H, W) crops -> (N, 4K) offsets."""
        x = np.asarray(crops, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (1, self.in_h, self.in_w):
            raise ShapeMismatch(f"expected (N, 1, {self.in_h}, {self.in_w}), got {x.shape}")
        acts = []
        for conv, bn in zip(self.convs, self.bns):
            x = bn.forward(conv.forward(x), train=train)
            acts.append(x)
            x = mn.relu(x)
        self._acts = acts
        self._flat_shape = x.shape
        return self.fc.forward(x.reshape(x.shape[0], -1))

    def backward(self, doffsets):
        dx = self.fc.backward(doffsets).reshape(self._flat_shape)
        for conv, bn, act in zip(reversed(self.convs), reversed(self.bns),
                                 reversed(self._acts)):
            dx = bn.backward(mn.relu_backward(dx, act))
            dx = conv.backward(dx, need_dx=conv is not self.convs[0])
        return dx

    def decode(self, offsets) -> geometry.BoundaryPointSet:
        """Offsets of one crop -> boundary points in the crop frame."""
        defaults = geometry.default_points(self.in_w, self.in_h, self.k)
        return geometry.decode_offsets(defaults, offsets, self.in_w, self.in_h)


def bp_loss(offset_pred, offset_target, w0, h0, beta=1.0):
    """Smooth-L1 over predicted vs target boundary point coordinates.

    Residuals are taken in the crop frame (offsets scaled back by w0/h0)
    and normalized by 1/(2K) per instance, then averaged over the batch.
    Returns (loss, grad w.r.t. offset_pred).
    """
    pred = np.atleast_2d(np.asarray(offset_pred, dtype=np.float64))
    tgt = np.atleast_2d(np.asarray(offset_target, dtype=np.float64))
    if pred.shape != tgt.shape or pred.shape[1] % 4:
        raise ShapeMismatch(f"offset shapes {pred.shape} vs {tgt.shape}")
    n, four_k = pred.shape
    two_k = four_k // 2
    scale = np.tile([w0, h0], two_k)
    elems, g = mn.smooth_l1(pred * scale, tgt * scale, beta=beta, reduction="sum")
    loss = elems / (two_k * n)
    grad = g * scale / (two_k * n)
    return loss, grad


# ---------------------------------------------------------------------------
# recognizer
# ---------------------------------------------------------------------------

class RecognizerModel:
    """Conv encoder over the rectified crop plus an attention GRU decoder."""

    def __init__(self, in_h=8, in_w=64, channels=256, hidden=256,
                 charset=CHARSET, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_h = in_h
        self.in_w = in_w
        self.channels = channels
        self.hidden = hidden
        self.charset = charset
        self.convs = [
            Conv2d(1, channels, 3, 1, 1, rng=rng, name="recog.conv0"),
            Conv2d(channels, channels, 3, 1, 1, rng=rng, name="recog.conv1"),
            Conv2d(channels, channels, 3, 1, 1, rng=rng, name="recog.conv2"),
        ]
        self.bns = [BatchNorm2d(channels, name=f"recog.bn{i}") for i in range(3)]
        self.pools = [
            mn.MaxPool2d(2, 1, (0, 0)),
            mn.MaxPool2d(2, 1, (0, 1)),
            mn.MaxPool2d(2, 1, (0, 1)),
        ]
        # attention: e_j = w . tanh(W s + V F_j + b)
        self.att_w = Param("recog.att.w", mn.uniform_init(rng, (hidden,), hidden))
        self.att_wmat = Param("recog.att.W", mn.uniform_init(rng, (hidden, hidden), hidden))
        self.att_v = Param("recog.att.V", mn.uniform_init(rng, (channels, hidden), channels))
        self.att_b = Param("recog.att.b", np.zeros(hidden))
        self.gru = GRUCell(channels + charset.size, hidden, rng=rng, name="recog.gru")
        self.out = Linear(hidden, charset.size, rng=rng, name="recog.out")

    def params(self):
        out = []
        for c, b in zip(self.convs, self.bns):
            out += c.params() + b.params()
        out += [self.att_w, self.att_wmat, self.att_v, self.att_b]
        out += self.gru.params() + self.out.params()
        return out

    # -- encoder ------------------------------------------------------------

    def encode(self, crops, train=False):
        """(N, 1, 8, 64) rectified crops -> feature sequences (N, n, C)."""
        x = np.asarray(crops, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (1, self.in_h, self.in_w):
            raise ShapeMismatch(f"expected (N, 1, {self.in_h}, {self.in_w}), got {x.shape}")
        acts = []
        crop_pads = []
        for conv, bn, pool in zip(self.convs, self.bns, self.pools):
            x = bn.forward(conv.forward(x), train=train)
            acts.append(x)
            x = pool.forward(mn.relu(x))
            # width-padded pools grow W by one; center-crop it back
            extra = x.shape[3] - self.in_w
            crop_pads.append(extra)
            if extra > 0:
                off = extra // 2
                x = x[:, :, :, off:off + self.in_w]
        self._enc_acts = acts
        self._enc_pads = crop_pads
        self._enc_h = x.shape[2]
        # collapse height by mean, sequence axis is width
        return x.mean(axis=2).transpose(0, 2, 1)

    def encode_backward(self, dF):
        h = self._enc_h
        dx = dF.transpose(0, 2, 1)[:, :, None, :] / h
        dx = np.broadcast_to(dx, (dx.shape[0], dx.shape[1], h, dx.shape[3])).copy()
        for conv, bn, pool, act, extra in zip(
                reversed(self.convs), reversed(self.bns), reversed(self.pools),
                reversed(self._enc_acts), reversed(self._enc_pads)):
            if extra > 0:
                off = extra // 2
                padded = np.zeros(dx.shape[:3] + (self.in_w + extra,))
                padded[:, :, :, off:off + self.in_w] = dx
                dx = padded
            dx = mn.relu_backward(pool.backward(dx), act)
            dx = bn.backward(dx)
            dx = conv.backward(dx, need_dx=conv is not self.convs[0])
        return dx

    # -- decoder ------------------------------------------------------------

    def attend(self, f, s_prev, fv=None):
        """Attention weights and glimpse for one feature sequence (n, C)."""
        if fv is None:
            fv = f @ self.att_v.value
        a = fv + s_prev @ self.att_wmat.value + self.att_b.value
        t = np.tanh(a)
        e = t @ self.att_w.value
        alpha = mn.softmax(e)
        g = alpha @ f
        cache = (f, s_prev, t, alpha)
        return alpha, g, cache

    def attend_backward(self, dg, dalpha_extra, cache):
        f, s_prev, t, alpha = cache
        dalpha = f @ dg
        if dalpha_extra is not None:
            dalpha = dalpha + dalpha_extra
        df = np.outer(alpha, dg)
        de = mn.softmax_backward(dalpha, alpha)
        self.att_w.grad += t.T @ de
        da = np.outer(de, self.att_w.value) * (1.0 - t * t)
        self.att_v.grad += f.T @ da
        df += da @ self.att_v.value.T
        dsum = da.sum(axis=0)
        self.att_wmat.grad += np.outer(s_prev, dsum)
        self.att_b.grad += dsum
        ds = dsum @ self.att_wmat.value.T
        return df, ds

    def _step(self, f, s_prev, y_prev, fv):
        """One decode step; returns (p, s_new, alpha, cache)."""
        if not (0 <= y_prev < self.charset.size):
            raise IndexOutOfRange(f"symbol index {y_prev} outside charset")
        alpha, g, att_cache = self.attend(f, s_prev, fv)
        onehot = np.zeros(self.charset.size)
        onehot[y_prev] = 1.0
        x_in = np.concatenate([g, onehot])[None, :]
        s_new, gru_cache = self.gru.forward(x_in, s_prev[None, :])
        s_new = s_new[0]
        logits = self.out.forward(s_new[None, :])[0]
        p = mn.softmax(logits)
        return p, s_new, alpha, (att_cache, gru_cache, s_new)

    def decoder_step(self, f, s_prev, y_prev):
        """Public single step: (p over |S|, s_new, alpha)."""
        fv = f @ self.att_v.value
        p, s_new, alpha, _ = self._step(f, s_prev, int(y_prev), fv)
        return p, s_new, alpha

    def decode_greedy(self, f, max_t=32) -> DecodeResult:
        """Greedy argmax decoding until EOS or max_t steps."""
        fv = f @ self.att_v.value
        s = np.zeros(self.hidden)
        y = self.charset.eos  # start-of-sequence token
        probs, attn, picked = [], [], []
        for _ in range(max_t):
            p, s, alpha, _ = self._step(f, s, y, fv)
            y = int(np.argmax(p))
            probs.append(p)
            attn.append(alpha)
            picked.append(p[y])
            if y == self.charset.eos:
                break
        text = self.charset.decode([int(np.argmax(p)) for p in probs])
        score = float(np.exp(np.mean(np.log(np.maximum(picked, 1e-300)))))
        return DecodeResult(text=text, probs=np.array(probs),
                            attention=np.array(attn), score=score)

    def recognition_loss(self, f, target, backward=True):
        """Teacher-forced mean NLL over the target sequence (ends with EOS).

        With backward=True, parameter gradients are accumulated and the
        gradient w.r.t. f is returned as (loss, df).
        """
        target = np.asarray(target, dtype=np.int64).reshape(-1)
        if target.size == 0:
            raise EmptyTarget("empty target sequence")
        if target[-1] != self.charset.eos:
            raise EmptyTarget("target must end with the EOS symbol")
        fv = f @ self.att_v.value
        s = np.zeros(self.hidden)
        y_prev = self.charset.eos
        steps = []
        logps = np.empty(target.size)
        for t, y_t in enumerate(target):
            p, s_new, alpha, cache = self._step(f, s, int(y_prev), fv)
            logps[t] = np.log(max(p[y_t], 1e-300))
            steps.append((p, s, cache))
            s = s_new
            y_prev = y_t
        loss = -float(logps.mean())
        if not backward:
            return loss, None

        big_t = target.size
        df = np.zeros_like(f)
        ds_carry = np.zeros(self.hidden)
        for t in reversed(range(big_t)):
            p, s_prev, (att_cache, gru_cache, s_new) = steps[t]
            dlogits = p.copy()
            dlogits[target[t]] -= 1.0
            dlogits /= big_t
            # projection grads by hand: Linear only caches its last forward
            self.out.weight.grad += np.outer(s_new, dlogits)
            self.out.bias.grad += dlogits
            ds = dlogits @ self.out.weight.value.T + ds_carry
            dx_in, ds_prev = self.gru.backward(ds[None, :], gru_cache)
            dg = dx_in[0, :self.channels]
            df_t, ds_att = self.attend_backward(dg, None, att_cache)
            df += df_t
            ds_carry = ds_prev[0] + ds_att
        return loss, df


def total_loss(bpdn_offsets, target_offsets, recognizer, f, text_target,
               crop_w=64, crop_h=8, beta=1.0):
    """Combined objective: boundary point Smooth-L1 plus recognition NLL.

    Returns (loss, breakdown, grad w.r.t. offsets, grad w.r.t. f); parameter
    gradients for the recognizer decoder are accumulated as a side effect.
    """
    l_bp, doff = bp_loss(bpdn_offsets, target_offsets, crop_w, crop_h, beta=beta)
    l_recog, df = recognizer.recognition_loss(f, text_target)
    total = l_bp + l_recog
    return total, {"l_bp": l_bp, "l_recog": l_recog}, doff, df
