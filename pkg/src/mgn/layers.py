"""Neural-net building blocks over the autodiff tape.

Functional ops take parameter containers; containers draw their initial
values from name-keyed child streams of the init Rng, so initialization is
order-independent and reproducible.  Feature maps are channel-first, [C, H, W]
or [N, C, H, W]; ops accept both ranks.
"""

import numpy as np

from . import kernels
from .tensor import Tensor, concat, softmax

NORM_EPS = 1e-5


def _kaiming_uniform(rng, name: str, shape, fan_in: int) -> Tensor:
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.child(name).uniform(shape, -bound, bound), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)


class Conv2d:
    """k x k convolution, zero padding, optional stride."""

    def __init__(self, rng, name: str, c_in: int, c_out: int, k: int,
                 stride: int = 1, padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.weight = _kaiming_uniform(rng, f"{name}.weight", (c_out, c_in, k, k), c_in * k * k)
        self.bias = _zeros((c_out,))

    def named_params(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self)


def conv2d(x: Tensor, p: Conv2d) -> Tensor:
    """im2col + matmul convolution; output spatial size (H + 2p - k)//stride + 1."""
    batched = x.data.ndim == 4
    if not batched and x.data.ndim != 3:
        raise ValueError(f"conv2d expects [C,H,W] or [N,C,H,W], got {x.shape}")
    c_out, c_in, k, _ = p.weight.data.shape
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    if c != c_in:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {c_in}")
    pad, stride = p.padding, p.stride
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    hp, wp = xd.shape[2], xd.shape[3]
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1

    cols = kernels.im2col(np.ascontiguousarray(xd), k, stride)  # [N, C*k*k, OH*OW]
    w2 = p.weight.data.reshape(c_out, c_in * k * k)
    y = np.matmul(w2, cols).reshape(n, c_out, oh, ow)
    y += p.bias.data[:, None, None]
    out_data = y if batched else y[0]

    out = Tensor._from_op(out_data, (x, p.weight, p.bias), None, "conv2d")
    if out.requires_grad:
        def _bwd():
            g = out.grad if batched else out.grad[None]
            g2 = g.reshape(n, c_out, oh * ow)
            if p.bias.requires_grad:
                p.bias._accum(g.sum(axis=(0, 2, 3)))
            if p.weight.requires_grad:
                gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
                p.weight._accum(gw.reshape(p.weight.data.shape))
            if x.requires_grad:
                dcols = np.matmul(w2.T, g2)
                dxp = kernels.col2im(dcols, n, c_in, hp, wp, k, stride)
                if pad:
                    dxp = dxp[:, :, pad:-pad, pad:-pad]
                x._accum(dxp if batched else dxp[0])
        out._backward = _bwd
    return out


class InstanceNorm2d:
    """Per-sample, per-channel normalization over the spatial axes."""

    def __init__(self, channels: int, eps: float = NORM_EPS):
        self.eps = eps
        self.gamma = _ones((channels,))
        self.beta = _zeros((channels,))

    def named_params(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def __call__(self, x: Tensor) -> Tensor:
        return instance_norm2d(x, self.gamma, self.beta, self.eps)


def instance_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    mu = x.mean(axis=(-2, -1), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(-2, -1), keepdims=True)
    y = xc * ((var + eps) ** -0.5)
    c = gamma.data.shape[0]
    cshape = (c, 1, 1) if x.data.ndim == 3 else (1, c, 1, 1)
    return y * gamma.reshape(cshape) + beta.reshape(cshape)


class LayerNorm:
    """Normalization over the last (feature) axis."""

    def __init__(self, dim: int, eps: float = NORM_EPS):
        self.eps = eps
        self.gamma = _ones((dim,))
        self.beta = _zeros((dim,))

    def named_params(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        y = xc * ((var + self.eps) ** -0.5)
        d = self.gamma.data.shape[0]
        fshape = (1,) * (x.data.ndim - 1) + (d,)
        return y * self.gamma.reshape(fshape) + self.beta.reshape(fshape)


class Linear:
    """y = x W^T + b with weight [D_out, D_in]."""

    def __init__(self, rng, name: str, d_in: int, d_out: int):
        self.weight = _kaiming_uniform(rng, f"{name}.weight", (d_out, d_in), d_in)
        self.bias = _zeros((d_out,))

    def named_params(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.weight, self.bias)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    vec = x.data.ndim == 1
    h = x.reshape((1, -1)) if vec else x
    y = h.matmul(weight.T)
    d_out = weight.data.shape[0]
    y = y + bias.reshape((1,) * (y.data.ndim - 1) + (d_out,))
    return y.reshape((d_out,)) if vec else y


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return getattr(x, kind)()
    except AttributeError:
        raise ValueError(f"unknown activation {kind!r}") from None


def global_avg_pool2d(x: Tensor) -> Tensor:
    """Spatial mean: [C,H,W] -> [C] or [N,C,H,W] -> [N,C]."""
    return x.mean(axis=(-2, -1))


def adaptive_avg_pool2d(x: Tensor, out_hw: int) -> Tensor:
    """Average pool onto a fixed out_hw x out_hw grid.

    Bin (i, j) averages input rows [floor(i*H/S), ceil((i+1)*H/S)) and the
    matching columns, so any input size maps to the same token count and
    S == H == W is the identity.
    """
    s = int(out_hw)
    if s < 1:
        raise ValueError("output grid must be >= 1")
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape

    def edges(size):
        lo = [(i * size) // s for i in range(s)]
        hi = [-(-((i + 1) * size) // s) for i in range(s)]
        return lo, hi

    rlo, rhi = edges(h)
    clo, chi = edges(w)
    y = np.empty((n, c, s, s), dtype=xd.dtype)
    for i in range(s):
        for j in range(s):
            win = xd[:, :, rlo[i]:rhi[i], clo[j]:chi[j]]
            y[:, :, i, j] = win.mean(axis=(-2, -1), dtype=np.float64).astype(xd.dtype)

    out = Tensor._from_op(y if batched else y[0], (x,), None, "adaptive_avg_pool2d")
    if out.requires_grad:
        def _bwd():
            g = out.grad if batched else out.grad[None]
            dx = np.zeros_like(xd)
            for i in range(s):
                for j in range(s):
                    cnt = (rhi[i] - rlo[i]) * (chi[j] - clo[j])
                    dx[:, :, rlo[i]:rhi[i], clo[j]:chi[j]] += (g[:, :, i, j] / cnt)[:, :, None, None]
            x._accum(dx if batched else dx[0])
        out._backward = _bwd
    return out


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange [C*r*r, H, W] -> [C, H*r, W*r] (sub-pixel upsampling)."""
    batched = x.data.ndim == 4
    shape = x.data.shape
    crr, h, w = shape[-3], shape[-2], shape[-1]
    if crr % (r * r):
        raise ValueError(f"channels {crr} not divisible by r*r = {r * r}")
    c = crr // (r * r)
    if batched:
        n = shape[0]
        t = x.reshape((n, c, r, r, h, w)).transpose((0, 1, 4, 2, 5, 3))
        return t.reshape((n, c, h * r, w * r))
    t = x.reshape((c, r, r, h, w)).transpose((0, 3, 1, 4, 2))
    return t.reshape((c, h * r, w * r))


class Rcab:
    """Residual block modulated by its own squeeze-excite channel gate."""

    def __init__(self, rng, name: str, channels: int, reduction: int = 4):
        squeeze = max(1, channels // reduction)
        self.conv1 = Conv2d(rng, f"{name}.conv1", channels, channels, 3, padding=1)
        self.conv2 = Conv2d(rng, f"{name}.conv2", channels, channels, 3, padding=1)
        self.fc1 = Linear(rng, f"{name}.fc1", channels, squeeze)
        self.fc2 = Linear(rng, f"{name}.fc2", squeeze, channels)

    def named_params(self, prefix: str):
        out = []
        for sub in ("conv1", "conv2", "fc1", "fc2"):
            out += getattr(self, sub).named_params(f"{prefix}.{sub}")
        return out

    def __call__(self, x: Tensor) -> Tensor:
        return rcab_forward(x, self)


def rcab_forward(x: Tensor, p: Rcab) -> Tensor:
    body = p.conv2(p.conv1(x).relu())
    gate = p.fc2(p.fc1(global_avg_pool2d(body)).relu()).sigmoid()
    return x + body * gate


class VitBlock:
    """Pre-norm transformer block: LN, multi-head self-attention, LN, MLP."""

    def __init__(self, rng, name: str, dim: int, heads: int, mlp_ratio: int = 2):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.dim = dim
        self.ln1 = LayerNorm(dim)
        self.wq = Linear(rng, f"{name}.wq", dim, dim)
        self.wk = Linear(rng, f"{name}.wk", dim, dim)
        self.wv = Linear(rng, f"{name}.wv", dim, dim)
        self.wo = Linear(rng, f"{name}.wo", dim, dim)
        self.ln2 = LayerNorm(dim)
        hidden = dim * mlp_ratio
        self.fc1 = Linear(rng, f"{name}.fc1", dim, hidden)
        self.fc2 = Linear(rng, f"{name}.fc2", hidden, dim)

    def named_params(self, prefix: str):
        out = []
        for sub in ("ln1", "wq", "wk", "wv", "wo", "ln2", "fc1", "fc2"):
            out += getattr(self, sub).named_params(f"{prefix}.{sub}")
        return out

    def __call__(self, tokens: Tensor) -> Tensor:
        return vit_block_forward(tokens, self)


def vit_block_forward(tokens: Tensor, p: VitBlock) -> Tensor:
    batched = tokens.data.ndim == 3
    if not batched and tokens.data.ndim != 2:
        raise ValueError(f"tokens must be [T,D] or [N,T,D], got {tokens.shape}")
    t = tokens.data.shape[-2]
    dh = p.dim // p.heads
    scale = dh**-0.5

    h = p.ln1(tokens)
    q, k, v = p.wq(h), p.wk(h), p.wv(h)

    def split(z):
        if batched:
            n = z.data.shape[0]
            return z.reshape((n, t, p.heads, dh)).transpose((0, 2, 1, 3))
        return z.reshape((t, p.heads, dh)).transpose((1, 0, 2))

    q, k, v = split(q), split(k), split(v)
    attn = softmax(q.matmul(k.transpose((0, 1, 3, 2) if batched else (0, 2, 1))) * scale, axis=-1)
    ctx = attn.matmul(v)
    if batched:
        n = ctx.data.shape[0]
        ctx = ctx.transpose((0, 2, 1, 3)).reshape((n, t, p.dim))
    else:
        ctx = ctx.transpose((1, 0, 2)).reshape((t, p.dim))
    x = tokens + p.wo(ctx)
    return x + p.fc2(p.fc1(p.ln2(x)).relu())
