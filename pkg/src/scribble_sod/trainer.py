"""One-round training: SGD with momentum, triangular LR, dual-scale consistency."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import DatasetManifest, Sample, augment, collate, epoch_order
from .losses import LossBreakdown, lsc_weights, total_objective
from .metrics import aggregate, evaluate_pair
from .network import SaliencyNet
from .ops import resize_array
from .tensor import ShapeError, Tensor, no_grad

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.scws"
LOG_NAME = "train_log.jsonl"


class NumericalError(RuntimeError):
    pass


def lr_at(iteration: int, total_iters: int, lr_min: float = 1e-5, lr_max: float = 0.01) -> float:
    """Triangular schedule: linear lr_min -> lr_max over [0, p], back to lr_min over [p, total]."""
    if total_iters < 2:
        raise ValueError("total_iters must be >= 2")
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {total_iters}]")
    peak = total_iters // 2
    if iteration <= peak:
        f = iteration / peak
    else:
        f = (total_iters - iteration) / (total_iters - peak)
    return lr_min * (1.0 - f) + lr_max * f


def sgd_step(params, lr: float, momentum: float = 0.9, weight_decay: float = 5e-4) -> None:
    """In-place momentum SGD; parameters flagged ``decay=False`` skip weight decay.

    Parameters without a gradient (unused branches) are left untouched.
    """
    for p in params:
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} does not match parameter {p.name} {p.data.shape}")
        g = p.grad + weight_decay * p.data if (p.decay and weight_decay) else p.grad
        if p.momentum is None:
            p.momentum = np.zeros_like(p.data)
        p.momentum *= momentum
        p.momentum += g
        p.data -= lr * p.momentum


def small_size(size: int, rho: float) -> int:
    """Down-scaled side length, rounded to a multiple of 16 (at least 16)."""
    return max(16, int(round(size * rho / 16.0)) * 16)


def forward_losses(net: SaliencyNet, images: np.ndarray, scribbles: np.ndarray, cfg: TrainConfig):
    """Training-mode forward at both scales; returns ``(total_tensor, LossBreakdown)``."""
    out = net.forward(Tensor(images), training=True)
    small = None
    if cfg.enable_ssc:
        h, w = images.shape[2:]
        sh, sw = small_size(h, cfg.objective.rho), small_size(w, cfg.objective.rho)
        small = net.forward(Tensor(resize_array(images, sh, sw)), training=True).final
    obj = cfg.objective if cfg.enable_lsc else dataclasses.replace(cfg.objective, beta=0.0)
    weights = lsc_weights(images, cfg.lsc)
    return total_objective(out, small, images, scribbles, obj, cfg.lsc, weights=weights)


def train_step(net: SaliencyNet, images: np.ndarray, scribbles: np.ndarray, cfg: TrainConfig, lr: float,
               batch_ids=()) -> LossBreakdown:
    total, breakdown = forward_losses(net, images, scribbles, cfg)
    if not np.isfinite(breakdown.l_total):
        raise NumericalError(f"non-finite loss {breakdown} on batch {list(batch_ids)}")
    net.zero_grad()
    total.backward()
    sgd_step(net.params.values(), lr, cfg.momentum, cfg.weight_decay)
    return breakdown


# --------------------------------------------------------------------------
# inference
# --------------------------------------------------------------------------
def predict(net: SaliencyNet, images: list, size: int, batch_size: int = 16) -> list:
    """Eval-mode saliency maps, each resized back to its image's own height/width."""
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            x = np.stack([resize_array(img, size, size) for img in chunk])
            final = net.forward(Tensor(x), training=False).final.data[:, 0]
            for img, m in zip(chunk, final):
                h, w = img.shape[1:]
                out.append(np.clip(resize_array(m, h, w), 0.0, 1.0))
    return out


def infer(checkpoint, image: np.ndarray) -> np.ndarray:
    net, cfg, _ = load_checkpoint(checkpoint)
    return predict(net, [image], cfg.train_size)[0]


def evaluate_samples(net: SaliencyNet, samples: list, size: int):
    preds = predict(net, [s.image for s in samples], size)
    rows = [(s.id,) + evaluate_pair(p, s.full_mask) for s, p in zip(samples, preds)]
    return aggregate(rows)


def scale_consistency(net: SaliencyNet, samples: list, size: int, rho: float) -> float:
    """Mean |S_small - resize(S_full)| over samples, eval mode."""
    small = small_size(size, rho)
    errs = []
    with no_grad():
        for s in samples:
            x = resize_array(s.image, size, size)[None]
            full = net.forward(Tensor(x), training=False).final.data
            lo = net.forward(Tensor(resize_array(x, small, small)), training=False).final.data
            errs.append(np.abs(lo - resize_array(full, small, small)).mean())
    return float(np.mean(errs))


# --------------------------------------------------------------------------
# full schedule
# --------------------------------------------------------------------------
@dataclass
class TrainResult:
    net: SaliencyNet
    checkpoint: Path
    history: list = field(default_factory=list)


def _state_arrays(net: SaliencyNet, epoch: int, iteration: int) -> dict:
    extra = {"state.epoch": np.array(float(epoch)), "state.iteration": np.array(float(iteration))}
    for k, p in net.params.items():
        if p.momentum is not None:
            extra[f"momentum.{k}"] = p.momentum
    return extra


def train(manifest: DatasetManifest, cfg: TrainConfig, out_dir, eval_samples: Optional[list] = None,
          resume: bool = False, stop_after_epoch: Optional[int] = None) -> TrainResult:
    """Run the schedule, appending JSON-lines records to ``train_log.jsonl``.

    ``eval_samples`` (with masks) are scored every ``cfg.eval_every`` epochs;
    by default the training manifest's own masks are used when present.
    ``stop_after_epoch`` interrupts the run (the schedule still spans
    ``cfg.epochs``), which together with ``resume`` supports restarts.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / CHECKPOINT_NAME
    samples = list(manifest.samples())
    if eval_samples is None and cfg.eval_every and manifest.has_masks:
        eval_samples = samples

    start_epoch, iteration = 0, 0
    if resume and ckpt_path.exists():
        net, saved_cfg, extra = load_checkpoint(ckpt_path)
        if saved_cfg.to_dict() != cfg.to_dict():
            raise ValueError("resume: checkpoint was written with a different config")
        start_epoch = int(extra.get("state.epoch", 0))
        iteration = int(extra.get("state.iteration", 0))
        for k, p in net.params.items():
            if f"momentum.{k}" in extra:
                p.momentum = extra[f"momentum.{k}"].copy()
    else:
        net = SaliencyNet(cfg.network, seed=cfg.seed, enable_aggm=cfg.enable_aggm)

    n = len(samples)
    steps = math.ceil(n / cfg.batch_size)
    total_iters = max(cfg.epochs * steps - 1, 2)
    history = []
    log_mode = "a" if resume else "w"
    with open(out / LOG_NAME, log_mode) as logf:
        for epoch in range(start_epoch, cfg.epochs):
            order = epoch_order(n, cfg.seed, epoch)
            for b in range(steps):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                batch = [augment(samples[i], [cfg.seed, epoch, int(i)], cfg.train_size) for i in idx]
                images, scribbles = collate(batch)
                lr = lr_at(min(iteration, total_iters), total_iters, cfg.lr_min, cfg.lr_max)
                br = train_step(net, images, scribbles, cfg, lr, [samples[i].id for i in idx])
                rec = {"iter": iteration, "lr": lr, **br.as_dict()}
                logf.write(json.dumps(rec) + "\n")
                history.append(rec)
                iteration += 1
            if eval_samples and cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
                res = evaluate_samples(net, eval_samples, cfg.train_size)
                rec = {"epoch": epoch + 1, "f_beta": res.f_beta, "e_xi": res.e_xi, "mae": res.mae}
                logf.write(json.dumps(rec) + "\n")
                history.append(rec)
                log.info("epoch %d: F=%.4f E=%.4f MAE=%.4f", epoch + 1, res.f_beta, res.e_xi, res.mae)
            logf.flush()
            last = epoch + 1 == cfg.epochs or epoch + 1 == stop_after_epoch
            if last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
                save_checkpoint(ckpt_path, net, cfg.to_dict(), _state_arrays(net, epoch + 1, iteration))
            if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
                break
    return TrainResult(net, ckpt_path, history)
