"""Deterministic training: robust loss, optimizers, schedule, loop.

Every random choice flows from one generator seeded by the config, so
a (seed, config, dataset) triple reproduces a run bit for bit. The
loop records per-iteration rows (learning rate, loss, denominator
events per Paon layer) plus periodic validation metrics, and keeps the
best checkpoint by that metric.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autograd import Tape, Variable, backward
from .layers import _DenominatorMonitor
from .models import save_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 4
    loss: str = "barron"
    barron_alpha: float = 1.5
    barron_c: float = 2.0
    optimizer: str = "adamw"
    lr: float = 1e-3
    lr_min: float = 1e-6
    weight_decay: float = 0.0
    momentum: float = 0.9
    schedule: str = "cosine"
    clip_norm: float = 1.0
    noise_snr_db: float = 40.0
    seed: int = 0
    eval_every: int = 250
    singularity_threshold: float = 0.01

    def __post_init__(self):
        if self.loss not in ("l2", "barron"):
            raise ValueError(f"loss must be l2 or barron, got {self.loss!r}")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"optimizer must be adamw or sgd, got {self.optimizer!r}")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"schedule must be constant or cosine, got {self.schedule!r}")
        if self.schedule == "cosine" and not (self.lr > self.lr_min > 0):
            raise ValueError(f"cosine schedule needs lr > lr_min > 0, got {self.lr} / {self.lr_min}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")


def barron_loss(pred, target, alpha=1.5, c=2.0):
    """Mean robust loss rho(d) = (|a-2|/a)*(((d/c)^2/|a-2| + 1)^(a/2) - 1).

    alpha = 2 is plain 0.5*(d/c)^2 and alpha = 0 the log form; both are
    the analytic limits of the general branch.
    """
    if pred.value.shape != target.value.shape:
        raise ValueError(f"shape mismatch {pred.value.shape} vs {target.value.shape}")
    d = ops.sub(pred, target)
    d2 = ops.mul(d, d)
    if alpha == 2:
        return ops.mean_all(ops.mul(d2, 0.5 / (c * c)))
    if alpha == 0:
        return ops.mean_all(ops.log(ops.add(ops.mul(d2, 0.5 / (c * c)), 1.0)))
    am2 = abs(alpha - 2.0)
    t = ops.add(ops.mul(d2, 1.0 / (c * c * am2)), 1.0)
    return ops.mean_all(ops.mul(ops.add(ops.power_scalar(t, alpha / 2.0), -1.0), am2 / alpha))


def l2_loss(pred, target):
    if pred.value.shape != target.value.shape:
        raise ValueError(f"shape mismatch {pred.value.shape} vs {target.value.shape}")
    d = ops.sub(pred, target)
    return ops.mean_all(ops.mul(d, d))


def cosine_lr(t, T, lr0, lr_min):
    """lr_min + 0.5*(lr0 - lr_min)*(1 + cos(pi*t/T))."""
    if T <= 0:
        raise ValueError("T must be positive")
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * t / T))


def clip_grad_norm(grads, max_norm):
    """Rescale grads in place iff their global L2 norm exceeds max_norm.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def make_adamw_state(params):
    return {
        "t": 0,
        "m": [np.zeros_like(p.value) for p in params],
        "v": [np.zeros_like(p.value) for p in params],
    }


def adamw_step(params, grads, state, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update with decoupled weight decay.

    A non-finite gradient anywhere skips the whole step (state
    untouched) and returns False.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            logger.warning("adamw_step skipped: non-finite gradient")
            return False
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        upd = mhat / (np.sqrt(vhat) + eps)
        if wd:
            upd = upd + wd * p.value
        p.value -= (lr * upd).astype(p.value.dtype, copy=False)
    return True


def make_sgd_state(params):
    return {"v": [np.zeros_like(p.value) for p in params]}


def sgd_momentum_step(params, grads, state, lr, momentum=0.9, wd=0.0):
    for g in grads:
        if not np.all(np.isfinite(g)):
            logger.warning("sgd step skipped: non-finite gradient")
            return False
    for p, g, v in zip(params, grads, state["v"]):
        eff = g + wd * p.value if wd else g
        v *= momentum
        v += eff
        p.value -= (lr * v).astype(p.value.dtype, copy=False)
    return True


def augment(lr_batch, hr_batch, rng, snr_db=None):
    """Seeded flips/rotation/channel shuffle on both scales, then noise.

    Each geometric op fires with probability 0.5 and is applied
    consistently to the low- and high-res images. Gaussian noise with
    per-image variance signal_power / 10^(SNR/10) lands on the
    low-res input only; snr_db None disables it.
    """
    lr_batch = lr_batch.copy()
    hr_batch = hr_batch.copy()
    n = lr_batch.shape[0]
    for i in range(n):
        if rng.random() < 0.5:
            lr_batch[i] = lr_batch[i, :, :, ::-1]
            hr_batch[i] = hr_batch[i, :, :, ::-1]
        if rng.random() < 0.5:
            lr_batch[i] = lr_batch[i, :, ::-1, :]
            hr_batch[i] = hr_batch[i, :, ::-1, :]
        if rng.random() < 0.5:
            lr_batch[i] = np.rot90(lr_batch[i], axes=(1, 2))
            hr_batch[i] = np.rot90(hr_batch[i], axes=(1, 2))
        if rng.random() < 0.5:
            perm = rng.permutation(lr_batch.shape[1])
            lr_batch[i] = lr_batch[i, perm]
            hr_batch[i] = hr_batch[i, perm]
    if snr_db is not None and np.isfinite(snr_db):
        for i in range(n):
            power = float((lr_batch[i].astype(np.float64) ** 2).mean())
            sigma = np.sqrt(power * 10.0 ** (-snr_db / 10.0))
            noise = rng.normal(0.0, sigma, size=lr_batch[i].shape)
            lr_batch[i] = (lr_batch[i] + noise).astype(lr_batch.dtype)
    return lr_batch, hr_batch


@dataclass
class RunLog:
    layer_names: list
    rows: list = field(default_factory=list)
    best_iter: int = -1
    best_metric: float = -np.inf

    def append(self, iteration, lr, loss, metric, events):
        self.rows.append({"iter": iteration, "lr": lr, "loss": loss,
                          "metric": metric, "events": list(events)})

    def to_csv(self):
        # Metric values are capped at 100 so a perfect-reconstruction
        # PSNR (inf) stays numeric in the CSV.
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["iter", "lr", "loss", "metric"]
        header += [f"qzero_events_layer_{i}" for i in range(len(self.layer_names))]
        writer.writerow(header)
        for row in self.rows:
            metric = "" if row["metric"] is None else repr(min(float(row["metric"]), 100.0))
            writer.writerow([row["iter"], repr(float(row["lr"])), repr(float(row["loss"])),
                             metric] + row["events"])
        return buf.getvalue()


class TrainAbort(RuntimeError):
    """Raised when the loss goes non-finite; carries the batch recipe."""


def _pala_layers(model):
    return [(name, m) for name, m in model.named_modules()
            if isinstance(m, _DenominatorMonitor)]


class SrTask:
    """Patch-to-patch regression over a list of SrPair samples.

    Holds train/val splits of paired arrays; evaluation is mean PSNR
    over the validation pairs, computed one image at a time so large
    sets stay within memory.
    """

    def __init__(self, train_pairs, val_pairs, cfg):
        if not train_pairs:
            raise ValueError("need at least one training pair")
        self.train_pairs = train_pairs
        self.val_pairs = val_pairs
        self.cfg = cfg

    def sample_batch(self, rng):
        idx = rng.integers(0, len(self.train_pairs), size=self.cfg.batch_size)
        lr = np.stack([self.train_pairs[i].lr for i in idx])
        hr = np.stack([self.train_pairs[i].hr for i in idx])
        lr, hr = augment(lr, hr, rng, self.cfg.noise_snr_db)
        return lr, hr

    def loss(self, pred, target):
        t = Variable(np.ascontiguousarray(target))
        if self.cfg.loss == "barron":
            return barron_loss(pred, t, self.cfg.barron_alpha, self.cfg.barron_c)
        return l2_loss(pred, t)

    def evaluate(self, model):
        from .metrics import psnr_rgb
        vals = []
        for pair in self.val_pairs:
            pred = model(Variable(pair.lr[None])).value[0]
            vals.append(psnr_rgb(pred, pair.hr))
        finite = [v for v in vals if np.isfinite(v)]
        if not finite:
            return float("inf")
        return float(np.mean(finite))


class ClsTask:
    """Image classification; evaluation is validation accuracy."""

    def __init__(self, train_x, train_y, val_x, val_y, cfg, eval_batch=250):
        if len(train_x) != len(train_y) or len(val_x) != len(val_y):
            raise ValueError("image/label length mismatch")
        self.train_x = train_x
        self.train_y = train_y
        self.val_x = val_x
        self.val_y = val_y
        self.cfg = cfg
        self.eval_batch = eval_batch

    def sample_batch(self, rng):
        idx = rng.integers(0, len(self.train_x), size=self.cfg.batch_size)
        x = self.train_x[idx].copy()
        # Horizontal flip is the only geometric change that preserves
        # class identity for arbitrary image sets.
        for i in range(x.shape[0]):
            if rng.random() < 0.5:
                x[i] = x[i, :, :, ::-1]
        return x, self.train_y[idx]

    def loss(self, pred, target):
        return ops.cross_entropy(pred, target)

    def evaluate(self, model):
        hits = 0
        for start in range(0, len(self.val_x), self.eval_batch):
            xb = self.val_x[start:start + self.eval_batch]
            yb = self.val_y[start:start + self.eval_batch]
            logits = model(Variable(np.ascontiguousarray(xb))).value
            hits += int((logits.argmax(axis=1) == yb).sum())
        return hits / len(self.val_x)


def train_loop(model, task, cfg, checkpoint_dir=None):
    """Optimize model on task; returns the RunLog.

    ``task`` supplies sample_batch(rng) -> (input array, target),
    loss(pred Variable, target) -> scalar Variable, and
    evaluate(model) -> float (higher is better).
    """
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    if cfg.optimizer == "adamw":
        state = make_adamw_state(params)
    else:
        state = make_sgd_state(params)
    pala = _pala_layers(model)
    log = RunLog(layer_names=[name for name, _ in pala])
    model.train(True)

    for it in range(cfg.iterations):
        if cfg.schedule == "cosine":
            lr = cosine_lr(it, cfg.iterations, cfg.lr, cfg.lr_min)
        else:
            lr = cfg.lr
        x, target = task.sample_batch(rng)
        with Tape() as tape:
            pred = model(Variable(np.ascontiguousarray(x)))
            loss = task.loss(pred, target)
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            log.append(it, lr, loss_val, None,
                       [m.denominator_events(cfg.singularity_threshold) for _, m in pala])
            raise TrainAbort(
                f"non-finite loss {loss_val} at iteration {it}; "
                f"batch reproducible from cfg.seed={cfg.seed} after {it} sampled batches")
        for p in params:
            p.zero_grad()
        backward(tape, loss)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
        if cfg.clip_norm is not None:
            clip_grad_norm(grads, cfg.clip_norm)
        if cfg.optimizer == "adamw":
            adamw_step(params, grads, state, lr, cfg.weight_decay)
        else:
            sgd_momentum_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)

        events = [m.denominator_events(cfg.singularity_threshold) for _, m in pala]
        metric = None
        if cfg.eval_every and ((it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations):
            model.eval()
            metric = float(task.evaluate(model))
            model.train(True)
            if metric > log.best_metric:
                log.best_metric = metric
                log.best_iter = it
                if checkpoint_dir is not None:
                    save_checkpoint(model, checkpoint_dir,
                                    manifest={"iteration": it, "metric": metric,
                                              "seed": cfg.seed})
        log.append(it, lr, loss_val, metric, events)
    return log
