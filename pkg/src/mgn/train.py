"""Training engine: loss, schedule, optimizer, synthetic data, and the loop.

Given (seed, config) the run is fully deterministic: data synthesis, batch
sampling, augmentation and init all draw from purpose-keyed child streams of
the master seed, and the loop itself is single-threaded.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .config import LossWeights, TrainConfig, config_dict
from .fileio import save_checkpoint
from .metrics import psnr, ssim
from .model import ForwardOutputs, Model, ModelConfig, build_model
from .rng import Rng
from .tensor import Tensor, no_grad


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    log_path: str
    best_val_psnr: float
    best_step: int
    final_val_psnr: float
    final_val_ssim: float
    steps: int


def total_loss(out: ForwardOutputs, target: Tensor, weights: LossWeights, aux: bool):
    """Mean-absolute losses of the three outputs; returns (scalar, components).

    The scalar is l_f + alpha_g*l_g + alpha_l*l_l; with aux supervision off
    (or a weight at zero) the corresponding term is dropped from the scalar
    but still reported in the components for logging.
    """
    l_f = (out.y - target).abs().mean()
    l_g = (out.x_global - target).abs().mean()
    l_l = (out.x_local - target).abs().mean()
    total = l_f
    if aux and weights.alpha_g > 0.0:
        total = total + l_g * weights.alpha_g
    if aux and weights.alpha_l > 0.0:
        total = total + l_l * weights.alpha_l
    return total, {"l_f": l_f.item(), "l_g": l_g.item(), "l_l": l_l.item()}


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay: lr(0) = lr0, lr(total_steps) = 0, both exact."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class Adam:
    """Standard Adam with bias correction; state is float32 like the params."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.named:
            g = p.grad
            if g is None:
                continue  # parameter unreachable this step: nothing to move
            if not np.isfinite(g).all():
                raise TrainingDiverged(f"non-finite gradient in {name}")
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def dihedral_transform(arr: np.ndarray, idx: int) -> np.ndarray:
    """One of the 8 axis-aligned symmetries: idx = rotation(0-3) + 4*flip."""
    if not 0 <= idx < 8:
        raise ValueError(f"dihedral index must be 0..7, got {idx}")
    out = np.rot90(arr, idx & 3, axes=(-2, -1))
    if idx >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment_pair(x: np.ndarray, y: np.ndarray, rng: Rng):
    """Apply one shared dihedral symmetry to an aligned pair."""
    idx = rng.integers(8)
    return dihedral_transform(x, idx), dihedral_transform(y, idx)


def _bilinear_up(grid: np.ndarray, size: int) -> np.ndarray:
    """Upsample [C, g, g] -> [C, size, size] with bilinear interpolation."""
    g = grid.shape[-1]
    t = np.linspace(0.0, g - 1.0, size)
    i0 = np.floor(t).astype(np.int64)
    i1 = np.minimum(i0 + 1, g - 1)
    f = (t - i0).astype(grid.dtype)
    rows = grid[:, i0, :] * (1 - f)[None, :, None] + grid[:, i1, :] * f[None, :, None]
    return rows[:, :, i0] * (1 - f)[None, None, :] + rows[:, :, i1] * f[None, None, :]


def _scene(rng: Rng, size: int) -> np.ndarray:
    """Procedural well-lit target: smooth illumination, soft shapes, mild texture."""
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij"
    )
    img = np.empty((3, size, size), dtype=np.float64)
    base = rng.uniform((3,), 0.25, 0.75).astype(np.float64)
    gx = rng.uniform((3,), -0.3, 0.3).astype(np.float64)
    gy = rng.uniform((3,), -0.3, 0.3).astype(np.float64)
    for ch in range(3):
        img[ch] = base[ch] + gx[ch] * (xx - 0.5) + gy[ch] * (yy - 0.5)

    n_shapes = 2 + rng.integers(3)
    for _ in range(n_shapes):
        color = rng.uniform((3,), 0.1, 0.9).astype(np.float64)
        cx = rng.uniform((), 0.15, 0.85) * size
        cy = rng.uniform((), 0.15, 0.85) * size
        if rng.integers(2):
            r = rng.uniform((), 0.08, 0.25) * size
            dist = np.sqrt((xx * size - cx) ** 2 + (yy * size - cy) ** 2)
            alpha = np.clip(r - dist + 0.5, 0.0, 1.0)
        else:
            hw = rng.uniform((), 0.08, 0.25) * size
            hh = rng.uniform((), 0.08, 0.25) * size
            ax = np.clip(hw - np.abs(xx * size - cx) + 0.5, 0.0, 1.0)
            ay = np.clip(hh - np.abs(yy * size - cy) + 0.5, 0.0, 1.0)
            alpha = ax * ay
        alpha *= rng.uniform((), 0.6, 1.0)
        img = img * (1.0 - alpha) + color[:, None, None] * alpha

    coarse = rng.uniform((3, max(2, size // 8), max(2, size // 8)), -1.0, 1.0)
    img += 0.03 * _bilinear_up(coarse.astype(np.float64), size)
    return np.clip(img, 0.05, 0.95).astype(np.float32)


def _degrade(target: np.ndarray, rng: Rng, exposure=None, gamma=None, cast=None,
             sigma=None) -> np.ndarray:
    """Darken a target: exposure scale, per-channel gamma and cast, sensor noise.

    Each factor is drawn from the stream unless passed explicitly; passing
    exposure=1, gamma=1, cast=1, sigma=0 reproduces the target exactly.
    """
    if exposure is None:
        exposure = rng.uniform((), 0.3, 0.8)
    if gamma is None:
        gamma = rng.uniform((3,), 1.5, 3.0)
    if cast is None:
        cast = rng.uniform((3,), 0.85, 1.0)
    if sigma is None:
        sigma = rng.uniform((), 0.0, 0.02)
    gamma = np.broadcast_to(np.asarray(gamma, np.float64), (3,))[:, None, None]
    cast = np.broadcast_to(np.asarray(cast, np.float64), (3,))[:, None, None]
    noise = rng.normal(target.shape, 0.0, 1.0).astype(np.float64) * sigma
    low = cast * (exposure * target.astype(np.float64)) ** gamma + noise
    return np.clip(low, 0.0, 1.0).astype(np.float32)


def synth_dataset(n_pairs: int, image_size: int, seed: int):
    """n_pairs of (degraded, target) float32 [3, s, s] images; fully seeded."""
    rng = Rng(seed).child("synth")
    lows = np.empty((n_pairs, 3, image_size, image_size), dtype=np.float32)
    targets = np.empty_like(lows)
    for i in range(n_pairs):
        targets[i] = _scene(rng, image_size)
        lows[i] = _degrade(targets[i], rng)
    return lows, targets


def evaluate(model: Model, lows: np.ndarray, targets: np.ndarray, chunk: int = 8):
    """Mean PSNR/SSIM of clamped enhanced output against targets."""
    p_sum = s_sum = 0.0
    n = lows.shape[0]
    with no_grad():
        for at in range(0, n, chunk):
            out = model.forward(Tensor(lows[at : at + chunk]))
            y = np.clip(out.y.data, 0.0, 1.0)
            for j in range(y.shape[0]):
                p_sum += psnr(y[j], targets[at + j])
                s_sum += ssim(y[j], targets[at + j])
    return p_sum / n, s_sum / n


def _fmt(x: float) -> str:
    return repr(float(x))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, weights: LossWeights,
          out_dir: str, quiet: bool = False) -> TrainResult:
    """Run the full loop; writes log.csv, best.ckpt and final.ckpt to out_dir.

    On a non-finite loss or gradient the parameters from before the most
    recent update are saved to last-good.ckpt and TrainingDiverged is raised.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg_doc = config_dict(model_cfg, train_cfg, weights)

    master = Rng(train_cfg.seed)
    ds = train_cfg.dataset
    train_x, train_y = synth_dataset(ds.train_pairs, ds.image_size, master.child("data.train").seed)
    val_x, val_y = synth_dataset(ds.val_pairs, ds.image_size, master.child("data.val").seed)
    batch_rng = master.child("batch")
    aug_rng = master.child("augment")

    model = build_model(model_cfg, train_cfg.seed)
    opt = Adam(model.named_parameters(), train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)

    crop = train_cfg.crop
    batch = train_cfg.batch_size
    total = train_cfg.total_steps
    log_path = os.path.join(out_dir, "log.csv")
    best_psnr = -1.0
    best_step = -1
    final_psnr = final_ssim = float("nan")
    prev_state = model.state()

    with open(log_path, "w", encoding="utf-8") as log:
        log.write("# config: " + json.dumps(cfg_doc, sort_keys=True, separators=(",", ":")) + "\n")
        log.write("step,lr,L_total,L_f,L_g,L_l,val_psnr,val_ssim\n")
        for step in range(total):
            lr = cosine_lr(step, total, train_cfg.lr0)
            idx = batch_rng.integers(ds.train_pairs, (batch,))
            xs = np.empty((batch, 3, crop, crop), dtype=np.float32)
            ys = np.empty_like(xs)
            for b, i in enumerate(idx):
                if ds.image_size > crop:
                    r0 = aug_rng.integers(ds.image_size - crop + 1)
                    c0 = aug_rng.integers(ds.image_size - crop + 1)
                else:
                    r0 = c0 = 0
                xc = train_x[i, :, r0 : r0 + crop, c0 : c0 + crop]
                yc = train_y[i, :, r0 : r0 + crop, c0 : c0 + crop]
                xs[b], ys[b] = augment_pair(xc, yc, aug_rng)

            out = model.forward(Tensor(xs))
            loss, parts = total_loss(out, Tensor(ys), weights, model_cfg.aux_supervision)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                save_checkpoint(os.path.join(out_dir, "last-good.ckpt"), cfg_doc, prev_state)
                raise TrainingDiverged(
                    f"non-finite loss {loss_val} at step {step}; "
                    f"last-good checkpoint saved to {out_dir}"
                )
            loss.backward()
            prev_state = model.state()
            opt.step(lr)

            is_val = (step + 1) % train_cfg.val_interval == 0 or step + 1 == total
            val_cols = ["", ""]
            if is_val:
                vp, vs = evaluate(model, val_x, val_y)
                val_cols = [_fmt(vp), _fmt(vs)]
                final_psnr, final_ssim = vp, vs
                if vp > best_psnr:
                    best_psnr, best_step = vp, step + 1
                    save_checkpoint(os.path.join(out_dir, "best.ckpt"), cfg_doc, model.state())
                if not quiet:
                    print(
                        f"step {step + 1}/{total} loss {loss_val:.4f} "
                        f"val_psnr {vp:.2f} val_ssim {vs:.4f}",
                        flush=True,
                    )
            log.write(
                ",".join(
                    [
                        str(step),
                        _fmt(lr),
                        _fmt(loss_val),
                        _fmt(parts["l_f"]),
                        _fmt(parts["l_g"]),
                        _fmt(parts["l_l"]),
                    ]
                    + val_cols
                )
                + "\n"
            )

    save_checkpoint(os.path.join(out_dir, "final.ckpt"), cfg_doc, model.state())
    return TrainResult(log_path, best_psnr, best_step, final_psnr, final_ssim, total)
