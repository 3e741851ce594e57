"""Minimal reverse-mode differentiable tensor core.

Just enough machinery for the two learned receivers: dense and 3x3
same-padded convolution layers, layer normalization, ReLU, the fused
sigmoid-BCE and MSE losses, and Adam. Tensors wrap numpy arrays; every op
builds a closure that accumulates gradients into its parents, and
``Tensor.backward`` replays them in reverse topological order.

float32 is the training precision; gradient checks build the same graphs
in float64.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class CheckpointError(ValueError):
    """Weight file does not match the requesting model."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, parents=()):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._backward = None
        self._parents = parents

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            # copy: closures may hand us views of arrays they still own
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self):
        """Populate ``grad`` on every upstream tensor that requires it."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"


def _unbroadcast(g, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None
    out = Tensor(data, parents=(a, b))

    def _bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"cannot matmul shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def _bw():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out._backward = _bw
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x [batch, n_in] -> [batch, n_out]."""
    return add(matmul(x, w), b)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), parents=(x,))

    def _bw():
        if x.requires_grad:
            x._accumulate(out.grad * (out.data > 0))

    out._backward = _bw
    return out


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """[B,C,H,W] -> [C*kh*kw, B*H*W] patch matrix with zero same-padding."""
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(C, kh, kw, B, H, W),
        strides=(s[1], s[2], s[3], s[0], s[2], s[3]),
    )
    return win.reshape(C * kh * kw, B * H * W)


def _conv_raw(x: np.ndarray, k: np.ndarray, bias=None):
    c_out, c_in, kh, kw = k.shape
    B, C, H, W = x.shape
    cols = _im2col(np.ascontiguousarray(x), kh, kw)
    flat = k.reshape(c_out, -1) @ cols
    if bias is not None:
        flat += bias.reshape(c_out, 1)
    out = flat.reshape(c_out, B, H, W)
    # materialize batch-major so downstream ops see a contiguous array
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), cols


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 zero-padded convolution preserving the spatial size.

    ``x`` is [batch, c_in, h, w], ``k`` is [c_out, c_in, kh, kw] with odd
    kernel dims; the optional per-output-channel ``bias`` is folded into
    the same pass. The patch matrix from the forward pass is kept on the
    node for gradient reuse.
    """
    if x.data.ndim != 4 or k.data.ndim != 4 or x.data.shape[1] != k.data.shape[1]:
        raise ShapeError(f"cannot convolve input {x.shape} with kernel {k.shape}")
    parents = (x, k) if bias is None else (x, k, bias)
    data, cols = _conv_raw(x.data, k.data, None if bias is None else bias.data)
    out = Tensor(data, parents=parents)

    def _bw():
        g = out.grad
        B, c_out, H, W = g.shape
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)).reshape(bias.data.shape))
        if k.requires_grad:
            gm = g.transpose(1, 0, 2, 3).reshape(c_out, -1)
            k._accumulate((gm @ cols.T).reshape(k.data.shape))
        if x.requires_grad:
            # full correlation with the flipped, in/out-swapped kernel
            kf = np.ascontiguousarray(
                k.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            )
            x._accumulate(_conv_raw(g, kf)[0])

    out._backward = _bw
    return out


def layer_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, axes=(1, 2, 3), eps: float = 1e-5
) -> Tensor:
    """Normalize jointly over ``axes`` with a per-channel affine.

    For activation maps [batch, c, h, w] the default normalizes each
    sample over channel, time, and frequency together; gamma and beta are
    [c]-shaped and broadcast along the channel axis.
    """
    axes = tuple(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    xhat = x.data - mu
    var = np.mean(xhat * xhat, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv  # in place: only the normalized values are kept for backward
    gshape = [1] * x.data.ndim
    gshape[1] = -1
    gb = gamma.data.reshape(gshape)
    data = xhat * gb
    data += beta.data.reshape(gshape)
    out = Tensor(data, parents=(x, gamma, beta))

    def _bw():
        g = out.grad
        reduce_axes = tuple(i for i in range(x.data.ndim) if i != 1)
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=reduce_axes))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gb
            m1 = dxhat.mean(axis=axes, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
            dxhat -= m1
            dxhat -= xhat * m2
            dxhat *= inv
            x._accumulate(dxhat)

    out._backward = _bw
    return out


def bce_with_logits(logits: Tensor, targets: Tensor, mask=None) -> Tensor:
    """Mean sigmoid binary cross entropy, fused for stability.

    Uses max(z,0) - z*t + log1p(exp(-|z|)) so large logits never reach an
    exp overflow. ``mask`` (same shape, not differentiated) selects which
    elements enter the mean.
    """
    z, t = logits.data, targets.data
    if z.shape != t.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    elem = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    if mask is None:
        weight = np.ones_like(z) / z.size
    else:
        mask = np.asarray(mask)
        weight = mask / mask.sum()
    out = Tensor(np.array((elem * weight).sum()), parents=(logits,))

    def _bw():
        if logits.requires_grad:
            logits._accumulate(out.grad * (expit(z) - t) * weight)

    out._backward = _bw
    return out


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.array(np.mean(diff * diff)), parents=(pred,))

    def _bw():
        if pred.requires_grad:
            pred._accumulate(out.grad * 2.0 * diff / diff.size)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# parameters, layers, optimizer
# ---------------------------------------------------------------------------


def kaiming_uniform(rng, shape, fan_in, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense:
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        self.w = Tensor(kaiming_uniform(rng, (n_in, n_out), n_in, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.w, self.b)

    def params(self):
        return [self.w, self.b]


class Conv2d:
    """3x3 same-padding convolution plus per-channel bias."""

    def __init__(self, c_in, c_out, rng, kernel=3, dtype=np.float32, zero_init=False):
        fan_in = c_in * kernel * kernel
        if zero_init:
            k = np.zeros((c_out, c_in, kernel, kernel), dtype=dtype)
        else:
            k = kaiming_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, dtype)
        self.k = Tensor(k, requires_grad=True)
        self.b = Tensor(np.zeros((1, c_out, 1, 1), dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(conv2d(x, self.k), self.b)

    def params(self):
        return [self.k, self.b]


class LayerNorm:
    def __init__(self, n_channels, dtype=np.float32, axes=(1, 2, 3)):
        self.gamma = Tensor(np.ones(n_channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(n_channels, dtype=dtype), requires_grad=True)
        self.axes = axes

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, axes=self.axes)

    def params(self):
        return [self.gamma, self.beta]


class AdamState:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, state: AdamState):
    """One bias-corrected Adam update from the grads stored on ``params``."""
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1 - b1**state.step_count
    correction2 = 1 - b2**state.step_count
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / correction1
        vhat = v / correction2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# checkpoints
#
# Little-endian layout: magic "TPWT", u32 version, u16 config-hash length +
# hash bytes, u32 tensor count; per tensor u16 name length + name, u8 ndim,
# u32 dims, float32 data.
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"TPWT"
_CKPT_VERSION = 1


def config_hash(description: str) -> str:
    return hashlib.sha256(description.encode()).hexdigest()


def save_checkpoint(path, named_params: dict, cfg_hash: str):
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        hb = cfg_hash.encode()
        f.write(struct.pack("<H", len(hb)))
        f.write(hb)
        f.write(struct.pack("<I", len(named_params)))
        for name, p in named_params.items():
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", p.data.ndim))
            f.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            f.write(p.data.astype("<f4").tobytes())


def load_checkpoint(path, named_params: dict, cfg_hash: str):
    """Load weights in place; reject any name/shape/config mismatch."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"not a checkpoint: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 8
    (hlen,) = struct.unpack_from("<H", blob, off)
    off += 2
    stored_hash = blob[off : off + hlen].decode()
    off += hlen
    if stored_hash != cfg_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {stored_hash[:12]}.., "
            f"model {cfg_hash[:12]}.."
        )
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    if count != len(named_params):
        raise CheckpointError(
            f"checkpoint has {count} tensors, model expects {len(named_params)}"
        )
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
        off += 4 * n
        if name not in named_params:
            raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
        p = named_params[name]
        if tuple(shape) != p.data.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {tuple(shape)}, model expects {p.data.shape}"
            )
        p.data = values.reshape(shape).astype(p.data.dtype)
