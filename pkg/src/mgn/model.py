"""Two-branch enhancement model.

A global branch summarizes the whole image as a short token sequence and
refines a per-channel description of illumination; a local U-shaped branch
works at full resolution.  After each stage pair the branches exchange
channel-wise attention weights ("mutual guidance"), each rescaling the
other's channels.  The local tail predicts a residual image that is split
into halving pieces and recombined with learned per-partition weight maps
(coarse-to-fine integration).
"""

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    Conv2d,
    InstanceNorm2d,
    Linear,
    Rcab,
    VitBlock,
    adaptive_avg_pool2d,
    conv2d,
    global_avg_pool2d,
    pixel_shuffle,
)
from .rng import Rng
from .tensor import Tensor, concat, softmax

TOKEN_DIM = 64
TOKEN_HEADS = 4
MLP_RATIO = 2

# Width/resolution plan of the five stage pairs: channel multiplier and
# spatial divisor per stage, relative to (base_channels, input size).
STAGE_CH = (1, 2, 4, 2, 1)
STAGE_DIV = (1, 2, 4, 2, 1)

FUSION_MODES = ("mutual", "g2l", "l2g", "concat")
RESIDUAL_MODES = ("c2f", "plain")

# Calibrated so the default model's parameter count lands in the expected
# band; see PARAM_COUNT_DEFAULT and the test that pins both.
DEFAULT_BASE_CHANNELS = 13
PARAM_COUNT_DEFAULT = 405_321


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = DEFAULT_BASE_CHANNELS
    token_grid: int = 8
    stages: int = 5
    partitions: int = 8
    fusion_mode: str = "mutual"
    residual_mode: str = "c2f"
    block_mask: tuple = field(default=None)
    aux_supervision: bool = True
    eps: float = 1e-6

    def __post_init__(self):
        if self.block_mask is None:
            object.__setattr__(self, "block_mask", (True,) * self.stages)
        else:
            object.__setattr__(self, "block_mask", tuple(bool(b) for b in self.block_mask))
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.token_grid < 1:
            raise ValueError("token_grid must be >= 1")
        if self.stages != len(STAGE_CH):
            raise ValueError(f"stages must be {len(STAGE_CH)}")
        if self.partitions < 1:
            raise ValueError("partitions must be >= 1")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ValueError(f"residual_mode must be one of {RESIDUAL_MODES}")
        if len(self.block_mask) != self.stages:
            raise ValueError("block_mask length must equal stages")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def stage_widths(self):
        return tuple(self.base_channels * m for m in STAGE_CH)


@dataclass
class ForwardOutputs:
    """Everything a loss or a probe needs from one forward pass."""

    y: Tensor               # enhanced image
    residual: Tensor        # full-resolution residual before integration
    x_global: Tensor        # exposure-corrected image from the global branch
    x_local: Tensor         # plain residual-corrected image
    stage_weights: list     # per stage: (w_g2l | None, w_l2g | None) or None if masked


class DownBlock:
    """Halve resolution, double channels: conv, strided conv, conv, rcab, 1x1."""

    def __init__(self, rng, name, c):
        self.conv1 = Conv2d(rng, f"{name}.conv1", c, c, 3, padding=1)
        self.conv2 = Conv2d(rng, f"{name}.conv2", c, 2 * c, 3, stride=2, padding=1)
        self.conv3 = Conv2d(rng, f"{name}.conv3", 2 * c, 2 * c, 3, padding=1)
        self.rcab = Rcab(rng, f"{name}.rcab", 2 * c)
        self.conv4 = Conv2d(rng, f"{name}.conv4", 2 * c, 2 * c, 1)

    def named_params(self, prefix):
        out = []
        for sub in ("conv1", "conv2", "conv3", "rcab", "conv4"):
            out += getattr(self, sub).named_params(f"{prefix}.{sub}")
        return out

    def __call__(self, x):
        h = self.conv1(x).relu()
        h = self.conv2(h).relu()
        h = self.conv3(h).relu()
        h = self.rcab(h)
        return self.conv4(h)


class UpBlock:
    """Double resolution, keep channels: conv to 4C, shuffle, conv, rcab, 1x1."""

    def __init__(self, rng, name, c):
        self.conv1 = Conv2d(rng, f"{name}.conv1", c, 4 * c, 3, padding=1)
        self.conv2 = Conv2d(rng, f"{name}.conv2", c, c, 3, padding=1)
        self.rcab = Rcab(rng, f"{name}.rcab", c)
        self.conv3 = Conv2d(rng, f"{name}.conv3", c, c, 1)

    def named_params(self, prefix):
        out = []
        for sub in ("conv1", "conv2", "rcab", "conv3"):
            out += getattr(self, sub).named_params(f"{prefix}.{sub}")
        return out

    def __call__(self, x):
        h = self.conv1(x).relu()
        h = pixel_shuffle(h, 2)
        h = self.conv2(h).relu()
        h = self.rcab(h)
        return self.conv3(h)


class FusionStage:
    """Per-stage exchange parameters.

    Attention modes allocate both directions (the mode only selects which are
    applied), so mutual/g2l/l2g share a parameter count.  Concat mode
    allocates a 1x1 merge convolution instead.
    """

    def __init__(self, rng, name, width, mode):
        self.mode = mode
        self.width = width
        if mode == "concat":
            self.merge = Conv2d(rng, f"{name}.merge", 2 * width, width, 1)
        else:
            self.g2l_q = Linear(rng, f"{name}.g2l.q", width, width)
            self.g2l_kv = Linear(rng, f"{name}.g2l.kv", width, width)
            self.l2g_q = Linear(rng, f"{name}.l2g.q", width, width)
            self.l2g_kv = Linear(rng, f"{name}.l2g.kv", width, width)
            # k = v starts near the all-ones vector so each softmax row mixes
            # to ~1 and the exchange begins as identity; otherwise repeated
            # reweighting collapses feature magnitude over the five stages
            self.g2l_kv.bias.data[:] = 1.0
            self.l2g_kv.bias.data[:] = 1.0

    def named_params(self, prefix):
        out = []
        if self.mode == "concat":
            out += self.merge.named_params(f"{prefix}.merge")
        else:
            for sub in ("g2l_q", "g2l_kv", "l2g_q", "l2g_kv"):
                out += getattr(self, sub).named_params(f"{prefix}.{sub.replace('_', '.')}")
        return out


def channel_attention(f_i: Tensor, f_j: Tensor, q_lin: Linear, kv_lin: Linear) -> Tensor:
    """Channel-reweighting vector from descriptor f_i attending over f_j.

    q = FC(f_i), k = v = FC(f_j); rows of q k^T / sqrt(C) are softmaxed and
    applied to v.  Cost is O(C^2) regardless of image resolution.
    """
    q = q_lin(f_i)
    k = kv_lin(f_j)
    c = q.data.shape[-1]
    scale = float(c) ** -0.5
    if q.data.ndim == 1:
        a = q.reshape((c, 1)).matmul(k.reshape((1, c))) * scale
        return softmax(a, axis=-1).matmul(k.reshape((c, 1))).reshape((c,))
    n = q.data.shape[0]
    a = q.reshape((n, c, 1)).matmul(k.reshape((n, 1, c))) * scale
    return softmax(a, axis=-1).matmul(k.reshape((n, c, 1))).reshape((n, c))


def mutual_guidance_step(f_g: Tensor, f_l_map: Tensor, stage: FusionStage):
    """One exchange between the branch states; returns (f_g', F_l', w_g2l, w_l2g)."""
    mode = stage.mode
    if mode == "concat":
        shape = f_l_map.data.shape
        if f_l_map.data.ndim == 3:
            g_map = f_g.reshape((stage.width, 1, 1)).expand(shape)
            merged = conv2d(concat([f_l_map, g_map], axis=0), stage.merge)
        else:
            g_map = f_g.reshape((shape[0], stage.width, 1, 1)).expand(shape)
            merged = conv2d(concat([f_l_map, g_map], axis=1), stage.merge)
        return f_g, merged, None, None

    w_g2l = None
    w_l2g = None
    f_l_vec = global_avg_pool2d(f_l_map)
    if mode in ("mutual", "g2l"):
        w_g2l = channel_attention(f_l_vec, f_g, stage.g2l_q, stage.g2l_kv)
    if mode in ("mutual", "l2g"):
        w_l2g = channel_attention(f_g, f_l_vec, stage.l2g_q, stage.l2g_kv)
    new_l = w_g2l * f_l_map if w_g2l is not None else f_l_map
    new_g = w_l2g * f_g if w_l2g is not None else f_g
    return new_g, new_l, w_g2l, w_l2g


def residual_divide(residual: Tensor, partitions: int):
    """Halving pieces r/2, r/4, ..., r/2^K plus the equal-size remainder r/2^K.

    The pieces and the remainder sum back to the residual exactly (the
    divisors are powers of two).
    """
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    pieces = [residual * (0.5**k) for k in range(1, partitions + 1)]
    rest = residual * (0.5**partitions)
    return pieces, rest


def residual_integrate(x: Tensor, pieces, rest: Tensor, weight_maps: Tensor) -> Tensor:
    """y = x + sum_k w_k * r_k + rest, with w_k broadcast over color channels."""
    axis = weight_maps.data.ndim - 3
    y = x + rest
    for k, piece in enumerate(pieces):
        y = y + piece * weight_maps.narrow(axis, k, 1)
    return y


def global_aux(x: Tensor, f_g: Tensor, gamma_head: Linear, eps: float) -> Tensor:
    """Exposure correction (x + eps)^gamma with per-channel gamma = softplus(FC(f_g))."""
    gamma = gamma_head(f_g).softplus()
    return (x + eps) ** gamma


class Model:
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        c = cfg.base_channels
        s = cfg.token_grid
        widths = cfg.stage_widths()

        self.embed = Linear(rng, "embed", 3, TOKEN_DIM)
        self.pos = Tensor(
            rng.child("pos").normal((s * s, TOKEN_DIM), 0.0, 0.02), requires_grad=True
        )
        self.vit = VitBlock(rng, "vit", TOKEN_DIM, TOKEN_HEADS, MLP_RATIO)
        self.global_proj = Linear(rng, "global_proj", TOKEN_DIM, c)

        self.head_conv = Conv2d(rng, "head.conv", 3, c, 3, padding=1)
        self.head_norm = InstanceNorm2d(c)

        prev = c
        self.global_blocks = []
        for t, w in enumerate(widths):
            self.global_blocks.append(Linear(rng, f"global_blocks.{t}.fc", prev, w))
            prev = w

        self.local1 = Conv2d(rng, "local1.conv", c, c, 3, padding=1)
        self.local2 = DownBlock(rng, "local2", c)
        self.local3 = DownBlock(rng, "local3", 2 * c)
        self.local4 = UpBlock(rng, "local4", 4 * c)
        self.local4_proj = Conv2d(rng, "local4.proj", 4 * c, 2 * c, 1)
        self.local5 = UpBlock(rng, "local5", 2 * c)
        self.local5_proj = Conv2d(rng, "local5.proj", 2 * c, c, 1)
        self.local6 = Conv2d(rng, "local6.conv", c, c, 3, padding=1)

        # disabled exchanges allocate nothing, so param counts track the mask
        self.fusion = [
            FusionStage(rng, f"fusion.{t}", w, cfg.fusion_mode) if cfg.block_mask[t] else None
            for t, w in enumerate(widths)
        ]

        self.residual_head = Conv2d(rng, "residual_head", c, 3, 3, padding=1)
        # damped output head: corrections start as small perturbations of the
        # pass-through image instead of overwhelming it
        self.residual_head.weight.data *= 0.1
        self.weight_head = (
            Conv2d(rng, "weight_head", c, cfg.partitions, 3, padding=1)
            if cfg.residual_mode == "c2f"
            else None
        )
        self.gamma_head = Linear(rng, "gamma_head", c, 3)

        self._named = self._collect()

    def _collect(self):
        named = []
        named += self.embed.named_params("embed")
        named.append(("pos", self.pos))
        named += self.vit.named_params("vit")
        named += self.global_proj.named_params("global_proj")
        named += self.head_conv.named_params("head.conv")
        named += self.head_norm.named_params("head.norm")
        for t, blk in enumerate(self.global_blocks):
            named += blk.named_params(f"global_blocks.{t}.fc")
        named += self.local1.named_params("local1.conv")
        named += self.local2.named_params("local2")
        named += self.local3.named_params("local3")
        named += self.local4.named_params("local4")
        named += self.local4_proj.named_params("local4.proj")
        named += self.local5.named_params("local5")
        named += self.local5_proj.named_params("local5.proj")
        named += self.local6.named_params("local6.conv")
        for t, fs in enumerate(self.fusion):
            if fs is not None:
                named += fs.named_params(f"fusion.{t}")
        named += self.residual_head.named_params("residual_head")
        if self.weight_head is not None:
            named += self.weight_head.named_params("weight_head")
        named += self.gamma_head.named_params("gamma_head")
        return named

    def named_parameters(self):
        return list(self._named)

    def parameters(self):
        return [t for _, t in self._named]

    def zero_grad(self):
        for _, t in self._named:
            t.grad = None

    def load_state(self, tensors: dict):
        """Install checkpoint arrays; names and shapes must match exactly."""
        names = [n for n, _ in self._named]
        missing = [n for n in names if n not in tensors]
        extra = [n for n in tensors if n not in set(names)]
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for n, t in self._named:
            arr = tensors[n]
            if tuple(arr.shape) != t.data.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {t.data.shape}")
            t.data = arr.astype(t.data.dtype)

    def state(self) -> dict:
        return {n: t.data.copy() for n, t in self._named}

    def forward(self, x: Tensor) -> ForwardOutputs:
        cfg = self.cfg
        batched = x.data.ndim == 4
        if not batched and x.data.ndim != 3:
            raise ValueError(f"input must be [3,H,W] or [N,3,H,W], got {x.shape}")
        xb = x if batched else x.reshape((1,) + x.data.shape)
        n, _, h, w = xb.data.shape
        if h < 8 or w < 8 or h % 4 or w % 4:
            raise ValueError(
                f"input size {h}x{w} unsupported: needs H, W >= 8 and divisible by 4 "
                "(pad reflectively first; the CLI does this automatically)"
            )

        s = cfg.token_grid
        pooled = adaptive_avg_pool2d(xb, s)                       # [N,3,S,S]
        tokens = pooled.reshape((n, 3, s * s)).transpose((0, 2, 1))
        tokens = self.embed(tokens) + self.pos.reshape((1, s * s, TOKEN_DIM))
        tokens = self.vit(tokens)
        f_g = self.global_proj(tokens.mean(axis=-2))              # [N,C]

        f_l = self.head_conv(xb)
        f_l = self.head_norm(f_l).relu()

        skip1 = skip2 = None
        stage_weights = []
        for t in range(cfg.stages):
            f_g = self.global_blocks[t](f_g).tanh()
            if t == 0:
                f_l = self.local1(f_l).relu()
                skip1 = f_l
            elif t == 1:
                f_l = self.local2(f_l)
                skip2 = f_l
            elif t == 2:
                f_l = self.local3(f_l)
            elif t == 3:
                f_l = conv2d(self.local4(f_l), self.local4_proj) + skip2
            else:
                f_l = conv2d(self.local5(f_l), self.local5_proj) + skip1
            if cfg.block_mask[t]:
                f_g, f_l, w_g2l, w_l2g = mutual_guidance_step(f_g, f_l, self.fusion[t])
                stage_weights.append((w_g2l, w_l2g))
            else:
                stage_weights.append(None)

        f_l = self.local6(f_l).relu()
        residual = conv2d(f_l, self.residual_head)
        x_local = xb + residual
        x_global = global_aux(xb, f_g, self.gamma_head, cfg.eps)

        if cfg.residual_mode == "c2f":
            wmaps = conv2d(f_l, self.weight_head).sigmoid() * 2.0
            pieces, rest = residual_divide(residual, cfg.partitions)
            y = residual_integrate(xb, pieces, rest, wmaps)
        else:
            y = x_local

        if not batched:
            y = y.reshape(y.data.shape[1:])
            residual = residual.reshape(residual.data.shape[1:])
            x_local = x_local.reshape(x_local.data.shape[1:])
            x_global = x_global.reshape(x_global.data.shape[1:])
            stage_weights = [
                None if sw is None else tuple(
                    None if v is None else v.reshape(v.data.shape[1:]) for v in sw
                )
                for sw in stage_weights
            ]
        return ForwardOutputs(y, residual, x_global, x_local, stage_weights)


def build_model(cfg: ModelConfig, seed: int) -> Model:
    return Model(cfg, Rng(seed).child("init"))


def param_count(model: Model) -> int:
    return int(sum(t.data.size for t in model.parameters()))


# Analytic operation counts.  Convention: one multiply-accumulate in a
# conv/fc/matmul counts 2 flops, bias adds count 1 per element, pooling sums
# count 1 per element.  Normalization, softmax, activations and pointwise
# adds are excluded as sub-percent bookkeeping.  The split matters more than
# the absolute numbers: "global" components must not depend on H x W except
# through the adaptive pooling term.


def _fc_flops(d_in, d_out):
    return 2 * d_in * d_out + d_out


def _conv_flops(c_in, c_out, k, oh, ow):
    return oh * ow * c_out * (2 * c_in * k * k + 1)


def _rcab_flops(c, h, w):
    squeeze = max(1, c // 4)
    return (
        2 * _conv_flops(c, c, 3, h, w)
        + c * h * w                      # gate pooling
        + _fc_flops(c, squeeze)
        + _fc_flops(squeeze, c)
        + c * h * w                      # gate multiply
    )


def flop_breakdown(cfg: ModelConfig, h: int, w: int) -> dict:
    """Per-component forward flop counts for one [3, h, w] image."""
    c = cfg.base_channels
    s = cfg.token_grid
    tok = s * s
    d = TOKEN_DIM
    widths = cfg.stage_widths()

    out = {}
    out["adaptive_pool"] = 3 * h * w + 3 * tok

    vit = 4 * tok * _fc_flops(d, d)              # q, k, v, o projections
    vit += 4 * tok * tok * d                     # qk^T and attn @ v
    vit += tok * (_fc_flops(d, MLP_RATIO * d) + _fc_flops(MLP_RATIO * d, d))
    out["global_head"] = tok * _fc_flops(3, d) + vit + _fc_flops(d, c)

    prev = c
    gb = 0
    for wd in widths:
        gb += _fc_flops(prev, wd)
        prev = wd
    out["global_blocks"] = gb

    attn = 0
    if cfg.fusion_mode != "concat":
        ndir = 2 if cfg.fusion_mode == "mutual" else 1
        for t, wd in enumerate(widths):
            if cfg.block_mask[t]:
                attn += ndir * (2 * _fc_flops(wd, wd) + 5 * wd * wd)
    out["fusion_attention"] = attn
    out["gamma_fc"] = _fc_flops(c, 3)

    res = [(h // dv, w // dv) for dv in STAGE_DIV]
    local = _conv_flops(3, c, 3, h, w)           # head conv
    local += _conv_flops(c, c, 3, h, w)          # stage 1
    for cin, stage_res in ((c, res[1]), (2 * c, res[2])):   # down blocks
        hh, ww = stage_res
        local += _conv_flops(cin, cin, 3, hh * 2, ww * 2)
        local += _conv_flops(cin, 2 * cin, 3, hh, ww)
        local += _conv_flops(2 * cin, 2 * cin, 3, hh, ww)
        local += _rcab_flops(2 * cin, hh, ww)
        local += _conv_flops(2 * cin, 2 * cin, 1, hh, ww)
    for cin, stage_res in ((4 * c, res[3]), (2 * c, res[4])):  # up blocks + proj
        hh, ww = stage_res
        local += _conv_flops(cin, 4 * cin, 3, hh // 2, ww // 2)
        local += _conv_flops(cin, cin, 3, hh, ww)
        local += _rcab_flops(cin, hh, ww)
        local += _conv_flops(cin, cin, 1, hh, ww)
        local += _conv_flops(cin, cin // 2, 1, hh, ww)
    local += _conv_flops(c, c, 3, h, w)          # stage 6
    fuse_local = 0
    for t, wd in enumerate(widths):
        if not cfg.block_mask[t]:
            continue
        hh, ww = res[t]
        if cfg.fusion_mode == "concat":
            fuse_local += _conv_flops(2 * wd, wd, 1, hh, ww)
        else:
            fuse_local += wd * hh * ww           # descriptor pooling
            if cfg.fusion_mode in ("mutual", "g2l"):
                fuse_local += wd * hh * ww       # channel rescale
    out["local_branch"] = local + fuse_local

    heads = _conv_flops(c, 3, 3, h, w)
    if cfg.residual_mode == "c2f":
        heads += _conv_flops(c, cfg.partitions, 3, h, w)
        heads += cfg.partitions * 3 * h * w * 2  # piece scaling and weighting
    heads += 3 * h * w * 2                       # exposure power and shift
    out["output_heads"] = heads
    return out


GLOBAL_FLOP_KEYS = ("adaptive_pool", "global_head", "global_blocks", "fusion_attention", "gamma_fc")


def global_branch_flops(breakdown: dict) -> int:
    return sum(breakdown[k] for k in GLOBAL_FLOP_KEYS)
