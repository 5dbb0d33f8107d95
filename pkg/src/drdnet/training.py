"""Adam training loop with stepwise lr halving, loss tracing, and resumable
checkpoints.

Batches are random crops drawn with replacement; the sampling generator, Adam
moments, and batch-norm running statistics all round-trip through checkpoints
bit-exactly, so a resumed run reproduces the uninterrupted run's trace byte for
byte. A non-finite loss aborts with a diagnostic naming the first offending
parameter or activation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import losses as L
from .checkpoint import AdamState, Checkpoint, save_checkpoint, state_tensors
from .config import RunConfig, flatten_run_config
from .errors import CompatibilityError, ConfigurationError, DivergenceError, UsageError
from .networks import DRDNet
from .rand import derive_rng, restore_rng, rng_state
from .tensor import Tensor, backward, scale
from .training_config import TrainConfig

TRACE_HEADER = "# iter lr loss_total loss_rain loss_detail"


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """lr0 halved once per lr_halving_period_epochs: lr0 * 2^-(epoch // period)."""
    if epoch < 0:
        raise UsageError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * 2.0 ** -(epoch // cfg.lr_halving_period_epochs)


class Adam:
    """Bias-corrected Adam over named parameters, float32 state throughout."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                raise UsageError(f"parameter {name} has no gradient; run backward first")
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def snapshot(self) -> AdamState:
        return AdamState(t=self.t, moments={
            name: (self.m[name].ravel().copy(), self.v[name].ravel().copy())
            for name, _ in self.params})

    def load(self, state: AdamState):
        names = {name for name, _ in self.params}
        if set(state.moments) != names:
            missing = sorted(names.symmetric_difference(state.moments))
            raise CompatibilityError(f"optimizer state does not match parameters: {missing[:3]}")
        self.t = state.t
        for name, p in self.params:
            m, v = state.moments[name]
            if m.size != p.data.size:
                raise CompatibilityError(
                    f"optimizer moment {name}: {m.size} values for a "
                    f"{p.data.size}-element parameter")
            self.m[name] = m.reshape(p.data.shape).astype(np.float32).copy()
            self.v[name] = v.reshape(p.data.shape).astype(np.float32).copy()


@dataclass
class TrainResult:
    model: DRDNet
    checkpoint: Checkpoint
    trace: list


def _first_nonfinite(model: DRDNet, outputs) -> str:
    for name, p in model.named_parameters():
        if not np.isfinite(p.data).all():
            return f"parameter {name}"
    if outputs is not None:
        for label, t in (("rain residual R", outputs.rain),
                         ("derained image I_p", outputs.derained),
                         ("detail image I_r", outputs.detail),
                         ("final image I_c", outputs.final)):
            if t is not None and not np.isfinite(t.data).all():
                return f"activation {label}"
    return "the loss value"


def _make_batch(samples, rng, batch_size, crop):
    picks = rng.integers(0, len(samples), size=batch_size)
    rainy, clean, resid = [], [], []
    for i in picks:
        o_img, b_img = samples[i]
        h, w = o_img.shape[1], o_img.shape[2]
        y0 = int(rng.integers(0, h - crop + 1))
        x0 = int(rng.integers(0, w - crop + 1))
        o_c = o_img[:, y0:y0 + crop, x0:x0 + crop]
        b_c = b_img[:, y0:y0 + crop, x0:x0 + crop]
        rainy.append(o_c)
        clean.append(b_c)
        # float64 difference of float32 values is exact, so a perfect rain
        # prediction reconstructs the clean crop exactly
        resid.append(o_c.astype(np.float64) - b_c.astype(np.float64))
    return (Tensor(np.stack(rainy).astype(np.float32)),
            Tensor(np.stack(clean).astype(np.float32)),
            Tensor(np.stack(resid)))


def _build_checkpoint(model, run_cfg: RunConfig, opt: Adam, rng, epoch, iteration) -> Checkpoint:
    config = flatten_run_config(run_cfg)
    config["state.epoch"] = str(epoch)
    config["state.iteration"] = str(iteration)
    return Checkpoint(config=config, tensors=state_tensors(model),
                      adam=opt.snapshot(), rng=rng_state(rng))


def train(samples, run_cfg: RunConfig, *, resume: Optional[Checkpoint] = None,
          trace_path=None, checkpoint_path=None, log=None) -> TrainResult:
    """Fit the model to (rainy, clean) pairs.

    samples: list of ((3,H,W) float32, (3,H,W) float32) arrays, H/W >= crop_size.
    resume: a checkpoint produced by this function with an identical RunConfig.
    Writes one trace line per iteration: `iter lr loss_total loss_rain loss_detail`.
    """
    cfg = run_cfg.train
    if cfg.epochs > 0:
        if not samples:
            raise ConfigurationError("training needs at least one sample")
        for o_img, b_img in samples:
            if o_img.shape != b_img.shape:
                raise ConfigurationError(f"pair shapes differ: {o_img.shape} vs {b_img.shape}")
            if o_img.shape[1] < cfg.crop_size or o_img.shape[2] < cfg.crop_size:
                raise ConfigurationError(
                    f"images must be at least crop_size={cfg.crop_size} on each side, "
                    f"got {o_img.shape}")

    model = DRDNet(run_cfg.net, seed=cfg.seed, with_detail_branch=cfg.detail_branch)
    opt = Adam(list(model.named_parameters()))
    rng = derive_rng(cfg.seed, "train-loop")
    start_epoch, iteration = 0, 0

    if resume is not None:
        resume.apply_to(model)
        if resume.adam is not None:
            opt.load(resume.adam)
        if resume.rng is not None:
            rng = restore_rng(resume.rng)
        start_epoch, iteration = resume.epoch, resume.iteration
        if start_epoch > cfg.epochs:
            raise ConfigurationError(
                f"checkpoint is at epoch {start_epoch}, past the configured {cfg.epochs}")

    trace = []
    trace_fh = open(trace_path, "a", encoding="utf-8") if trace_path else None
    if trace_fh and trace_fh.tell() == 0:
        trace_fh.write(TRACE_HEADER + "\n")
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            epoch_sums = np.zeros(3, dtype=np.float64)
            for _ in range(cfg.iterations_per_epoch):
                o_t, b_t, r_t = _make_batch(samples, rng, cfg.batch_size, cfg.crop_size)
                model.zero_grad()
                out = model(o_t)
                l_rain = L.loss_rain(out.rain, r_t)
                if cfg.detail_branch:
                    l_detail = L.loss_detail(out.derained, out.detail, b_t)
                    total = L.loss_total(l_rain, l_detail, run_cfg.loss)
                    detail_val = l_detail.item()
                else:
                    # ablation objective: no detail term, lambda1 still scales
                    total = scale(l_rain, run_cfg.loss.lambda1)
                    detail_val = 0.0
                total_val = total.item()
                if not np.isfinite(total_val):
                    raise DivergenceError(
                        f"non-finite loss at iteration {iteration + 1}: first "
                        f"non-finite value in {_first_nonfinite(model, out)}")
                backward(total)
                opt.step(lr)
                iteration += 1
                rain_val = l_rain.item()
                line = (f"{iteration} {lr:.9e} {total_val:.9e} "
                        f"{rain_val:.9e} {detail_val:.9e}")
                trace.append(line)
                if trace_fh:
                    trace_fh.write(line + "\n")
                epoch_sums += (total_val, rain_val, detail_val)
            if trace_fh:
                trace_fh.flush()
            if log:
                means = epoch_sums / cfg.iterations_per_epoch
                log(f"epoch {epoch + 1}/{cfg.epochs} lr {lr:g} "
                    f"loss_total {means[0]:.4f} loss_rain {means[1]:.4f} "
                    f"loss_detail {means[2]:.4f}")
            is_last = epoch + 1 == cfg.epochs
            if checkpoint_path and not is_last and (epoch + 1) % cfg.checkpoint_every == 0:
                snap = _build_checkpoint(model, run_cfg, opt, rng, epoch + 1, iteration)
                save_checkpoint(snap, f"{checkpoint_path}.ep{epoch + 1:04d}")
    finally:
        if trace_fh:
            trace_fh.close()

    final = _build_checkpoint(model, run_cfg, opt, rng, max(cfg.epochs, start_epoch), iteration)
    if checkpoint_path:
        save_checkpoint(final, checkpoint_path)
    return TrainResult(model=model, checkpoint=final, trace=trace)
