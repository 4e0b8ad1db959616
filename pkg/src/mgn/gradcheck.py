"""Finite-difference validation of tape gradients.

``grad_check`` compares analytic gradients against central differences.  The
check always runs in float64: tensors handed in are upcast in place for the
duration and restored afterwards, so float32 models can be checked without
the difference quotient drowning in rounding noise.  Coordinates that score
badly at the base step size are re-probed at a smaller and a larger step —
truncation error and rounding noise fade at some step size, while a genuinely
wrong gradient fails at all of them.
"""

import numpy as np

from .rng import Rng
from .tensor import no_grad


def grad_check(loss_fn, named_tensors, samples_per_tensor: int = 4, step: float = 1e-5, seed: int = 0):
    """Max relative error between tape and finite-difference gradients.

    loss_fn: zero-argument callable returning a scalar Tensor; it must close
    over the tensors in ``named_tensors`` (an iterable of (name, Tensor)).
    Up to ``samples_per_tensor`` coordinates per tensor are probed.  Returns
    (max_err, rows) with one (name, err) row per tensor.
    """
    pairs = list(named_tensors)
    rng = Rng(seed).child("grad-check")
    saved = [(t, t.data) for _, t in pairs]
    try:
        for _, t in pairs:
            t.data = t.data.astype(np.float64)
            t.grad = None

        loss = loss_fn()
        loss.backward()
        analytic = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                    for _, t in pairs}

        def eval_loss() -> float:
            with no_grad():
                return loss_fn().item()

        def probe(flat, i, h) -> float:
            v = flat[i]
            flat[i] = v + h
            f_plus = eval_loss()
            flat[i] = v - h
            f_minus = eval_loss()
            flat[i] = v
            return (f_plus - f_minus) / (2.0 * h)

        rows = []
        for name, t in pairs:
            flat = t.data.reshape(-1)
            n = flat.shape[0]
            if n <= samples_per_tensor:
                coords = range(n)
            else:
                coords = sorted({rng.integers(n) for _ in range(samples_per_tensor)})
            worst = 0.0
            for i in coords:
                h = step * (1.0 + abs(flat[i]))
                a = analytic[id(t)].reshape(-1)[i]

                def rel_err(fd: float) -> float:
                    # The 1e-5 floor keeps coordinates whose true gradient is
                    # ~0 (dead units) from scoring their difference-quotient
                    # rounding noise, a few 1e-9, as a large relative error.
                    return abs(a - fd) / max(abs(a), abs(fd), 1e-5)

                err = rel_err(probe(flat, i, h))
                # A poor score at one step size may be truncation error (too
                # much curvature for this h) or rounding noise (h too small
                # for this loss magnitude), not a wrong gradient.  A genuine
                # gradient bug disagrees at every step size, so retry the
                # suspicious coordinate at a smaller and a larger h and keep
                # its best score.
                if err > 1e-4:
                    err = min(err, rel_err(probe(flat, i, h / 10.0)),
                              rel_err(probe(flat, i, h * 10.0)))
                worst = max(worst, err)
            rows.append((name, worst))
        return max((e for _, e in rows), default=0.0), rows
    finally:
        for t, data in saved:
            t.data = data
            t.grad = None


def layer_report(rows):
    """Collapse per-parameter rows to per-layer rows (strip the last name part)."""
    layers = {}
    order = []
    for name, err in rows:
        layer = name.rsplit(".", 1)[0] if "." in name else name
        if layer not in layers:
            layers[layer] = 0.0
            order.append(layer)
        layers[layer] = max(layers[layer], err)
    return [(layer, layers[layer]) for layer in order]


def battery(model_cfg=None, seed: int = 0, size: int = 16, samples_per_tensor: int = 2):
    """Check every parameter of a full model through the training loss.

    Builds a model (default config unless given), runs a small image through
    the complete forward pass including the auxiliary outputs, and probes
    each parameter.  Returns (max_err, layer_rows).
    """
    from .config import LossWeights
    from .model import ModelConfig, build_model
    from .tensor import Tensor
    from .train import total_loss

    cfg = model_cfg if model_cfg is not None else ModelConfig()
    model = build_model(cfg, seed)
    rng = Rng(seed).child("battery")
    x = Tensor(rng.uniform((1, 3, size, size), 0.05, 0.6, dtype=np.float64))
    target = Tensor(rng.uniform((1, 3, size, size), 0.2, 0.95, dtype=np.float64))
    weights = LossWeights()

    def loss_fn():
        out = model.forward(x)
        loss, _ = total_loss(out, target, weights, aux=cfg.aux_supervision)
        return loss

    max_err, rows = grad_check(
        loss_fn, model.named_parameters(), samples_per_tensor=samples_per_tensor, seed=seed
    )
    return max_err, layer_report(rows)
