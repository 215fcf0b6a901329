"""Alternating adversarial optimisation with the two-phase transfer schedule."""
from __future__ import annotations

import contextlib
import copy
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from .config import ArchConfig, LossConfig, TrainConfig, to_flat
from .data import DatasetHandle, LabeledBatch, batch_stream
from .losses import (LossReport, TrainingDivergence, adv_loss_g, discriminator_objective, frozen,
                     generator_objective, orthogonal_reg, total_losses)
from .models import Networks, build_networks, network_params
from .transfer import (Checkpoint, FreezePolicy, TransferFlags, TransferMap, apply_transfer,
                       build_transfer_map, checkpoint_from_networks, encode_rng, freeze_policy,
                       save_checkpoint)

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "phase", "adv_g", "adv_d", "rec", "total_g", "total_d",
              "lr_generator", "lr_other", "wall_clock")


def ema_update(averaged: nn.Module, current: nn.Module, decay: float) -> nn.Module:
    """In place: avg <- decay * avg + (1 - decay) * current for parameters; buffers copied."""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    cur = dict(current.named_parameters())
    cur_buf = dict(current.named_buffers())
    with torch.no_grad():
        for name, p in averaged.named_parameters():
            if name not in cur or cur[name].shape != p.shape:
                raise ValueError(f"averaged parameter {name!r} has no matching current parameter")
            p.mul_(decay).add_(cur[name].detach(), alpha=1.0 - decay)
        for name, b in averaged.named_buffers():
            if cur_buf[name].shape != b.shape:
                raise ValueError(f"buffer {name!r} shape mismatch")
            b.copy_(cur_buf[name])
    return averaged


@dataclass
class TrainState:
    nets: Networks
    train_cfg: TrainConfig
    loss_cfg: LossConfig
    mode: str = "i2i"                 # "i2i" or "gan" (pretraining without encoder/adaptors)
    iteration: int = 0
    phase: int = 2
    phase1_iterations: int = 0
    rng: torch.Generator = field(default_factory=torch.Generator)
    optimizers: dict = field(default_factory=dict)
    ema: nn.Module | None = None
    history: list = field(default_factory=list)

    @property
    def policy(self) -> FreezePolicy:
        if self.mode == "gan":
            return FreezePolicy(2, frozenset({"generator", "discriminator"}))
        return freeze_policy(self.phase)

    def eval_networks(self) -> Networks:
        gen = self.ema if self.ema is not None else self.nets.generator
        n = self.nets
        return Networks(n.cfg, n.encoder, n.adaptors, gen, n.discriminator)


def _adam(params, lr, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)


def make_optimizers(state: TrainState) -> dict:
    """Fresh Adam state over exactly the trainable networks of the current phase."""
    cfg, nets, policy = state.train_cfg, state.nets, state.policy
    opts = {"d": _adam(nets.discriminator.parameters(), cfg.lr_other, cfg)}
    groups = []
    if policy.is_trainable("generator"):
        groups.append({"params": list(nets.generator.parameters()), "lr": cfg.lr_generator})
    if state.mode == "i2i" and policy.is_trainable("adaptors"):
        params = list(nets.adaptors.parameters())
        if params:
            groups.append({"params": params, "lr": cfg.lr_other})
    opts["g"] = _adam(groups, cfg.lr_generator, cfg) if groups else None
    return opts


def new_state(nets: Networks, train_cfg: TrainConfig, loss_cfg: LossConfig, mode: str = "i2i",
              phase1_iterations: int = 0) -> TrainState:
    rng = torch.Generator().manual_seed(int(train_cfg.seed))
    state = TrainState(nets, train_cfg, loss_cfg, mode=mode, rng=rng,
                       phase1_iterations=phase1_iterations,
                       phase=1 if phase1_iterations > 0 and mode == "i2i" else 2)
    if train_cfg.ema_decay > 0:
        state.ema = copy.deepcopy(nets.generator)
        for p in state.ema.parameters():
            p.requires_grad_(False)
    state.optimizers = make_optimizers(state)
    return state


def _sample(state: TrainState, n: int, like: torch.Tensor):
    cfg = state.nets.cfg
    c = torch.randint(cfg.num_classes, (n,), generator=state.rng)
    z = torch.randn(n, cfg.z_dim, generator=state.rng).to(like.dtype)
    return z, c


def _check(loss: torch.Tensor, what: str, state: TrainState) -> None:
    if not torch.isfinite(loss):
        last = state.history[-1] if state.history else None
        raise TrainingDivergence(f"{what} became non-finite at iteration {state.iteration}", last)


def _step(opt, loss, params, clip):
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if clip > 0:
        torch.nn.utils.clip_grad_norm_(params, clip)
    opt.step()


def train_step(state: TrainState, real_batch: LabeledBatch, source_batch: LabeledBatch | None = None):
    """One discriminator update (d_steps_per_g_step of them) then one generator-side update."""
    nets, cfg, lcfg, policy = state.nets, state.train_cfg, state.loss_cfg, state.policy
    i2i = state.mode == "i2i"
    if i2i and source_batch is None:
        raise ValueError("image-to-image training needs a source batch")
    real, c_real = real_batch.images.to(next(nets.discriminator.parameters()).dtype), real_batch.labels
    x = source_batch.images.to(real.dtype) if i2i else None
    n = real.shape[0] if x is None else x.shape[0]

    nets.encoder.eval()
    nets.adaptors.train()
    nets.generator.train()
    nets.discriminator.train()

    def fake_images(z, c):
        if i2i:
            with torch.no_grad():
                feats = nets.encoder(x)
            return nets.generator(nets.adaptors(feats), z, c)
        return nets.generator(None, z, c)

    d_params = list(nets.discriminator.parameters())
    for _ in range(cfg.d_steps_per_g_step):
        z, c = _sample(state, n, real)
        with torch.no_grad():
            fake = fake_images(z, c)
        loss_d, adv_d = discriminator_objective(nets.discriminator, real, c_real, fake, c, lcfg)
        _check(loss_d, "discriminator loss", state)
        _step(state.optimizers["d"], loss_d, d_params, cfg.grad_clip)

    z, c = _sample(state, n, real)
    opt_g = state.optimizers.get("g")
    g_trainable = policy.is_trainable("generator")
    ortho_module = nets.generator if g_trainable else None
    with frozen(nets.generator) if not g_trainable else contextlib.nullcontext():
        with torch.enable_grad() if opt_g is not None else torch.no_grad():
            if i2i:
                loss_g, parts = generator_objective(nets, x, z, c, lcfg, ortho_module=ortho_module)
                adv_g, rec, rec_levels = parts["adv_g"], parts["rec"], parts["rec_levels"]
            else:
                fake = nets.generator(None, z, c)
                with frozen(nets.discriminator):
                    score, _ = nets.discriminator(fake, c)
                adv_g = adv_loss_g(score, lcfg.adv_loss_kind)
                loss_g = lcfg.lambda_adv * adv_g
                if lcfg.orthogonal_reg_strength > 0:
                    loss_g = loss_g + lcfg.orthogonal_reg_strength * orthogonal_reg(nets.generator)
                adv_g, rec, rec_levels = adv_g.detach(), torch.zeros(()), {}
            _check(loss_g, "generator loss", state)
            if opt_g is not None:
                g_params = [p for grp in opt_g.param_groups for p in grp["params"]]
                _step(opt_g, loss_g, g_params, cfg.grad_clip)

    if state.ema is not None and g_trainable:
        ema_update(state.ema, nets.generator, cfg.ema_decay)
    report = total_losses(adv_g, adv_d, rec, lcfg, rec_levels)
    state.iteration += 1
    state.history.append(report)
    return state, report


def set_phase(state: TrainState, phase: int) -> None:
    if phase != state.phase:
        state.phase = phase
        state.optimizers = make_optimizers(state)


# -- full runs ------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    state: TrainState
    log_rows: list[dict]
    snapshots: list[dict]
    transfer_map: TransferMap | None = None


def state_checkpoint(state: TrainState, vocab=None, extra: dict | None = None) -> Checkpoint:
    roles = ("generator", "discriminator") if state.mode == "gan" else None
    kw = {"roles": roles} if roles else {}
    ckpt = checkpoint_from_networks(state.nets, vocab=vocab, iteration=state.iteration,
                                    rng_state={"torch": encode_rng(state.rng)},
                                    extra=dict(extra or {}, phase=state.phase, mode=state.mode), **kw)
    if state.ema is not None:
        ckpt.ema = network_params(state.ema, "generator", state.nets.cfg)
    return ckpt


def stream_seed(seed: int, stream: str) -> int:
    return int(np.random.SeedSequence([seed, sum(map(ord, stream))]).generate_state(1)[0])


def run_training(train_cfg: TrainConfig, arch: ArchConfig, loss_cfg: LossConfig, data: DatasetHandle,
                 pretrained: Checkpoint | None = None, flags: TransferFlags = TransferFlags(),
                 mode: str = "i2i", out_dir=None,
                 evaluate: Callable[[Networks], dict] | None = None,
                 extra: dict | None = None) -> TrainResult:
    """Build, optionally transfer, then train for ``total_iterations`` steps.

    Phase 1 (adaptors + discriminator only) runs only when a pretrained
    generator was transferred; from-scratch runs start directly in phase 2.
    """
    if arch.num_classes != data.num_classes:
        raise ValueError(f"architecture has {arch.num_classes} classes, dataset has {data.num_classes}")
    nets = build_networks(arch, train_cfg.seed)
    tmap = None
    if pretrained is not None and flags.any():
        tmap = build_transfer_map(pretrained, arch, flags)
        apply_transfer(tmap, nets)
    phase1 = train_cfg.phase1 if (tmap is not None and flags.generator and mode == "i2i") else 0
    state = new_state(nets, train_cfg, loss_cfg, mode=mode, phase1_iterations=phase1)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").unlink(missing_ok=True)
        log_fh = open(out / "train_log.csv", "w", newline="")
        writer = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
    extra = dict(extra or {}, train=to_flat(train_cfg), loss=to_flat(loss_cfg))
    rows, snapshots = [], []
    if train_cfg.total_iterations > 0:
        real = batch_stream(data, "train", train_cfg.batch_size, stream_seed(train_cfg.seed, "real"),
                            train_cfg.augment)
        source = batch_stream(data, "train", train_cfg.batch_size, stream_seed(train_cfg.seed, "source"),
                              train_cfg.augment) if mode == "i2i" else None
    start = time.time()
    try:
        for it in range(train_cfg.total_iterations):
            set_phase(state, 1 if it < phase1 else 2)
            _, report = train_step(state, next(real), next(source) if source else None)
            if train_cfg.log_every and state.iteration % train_cfg.log_every == 0:
                row = {"iteration": state.iteration, "phase": state.phase, **report.row(),
                       "lr_generator": train_cfg.lr_generator, "lr_other": train_cfg.lr_other,
                       "wall_clock": round(time.time() - start, 3)}
                rows.append(row)
                if writer:
                    writer.writerow(row)
                    log_fh.flush()
                log.info("iter %d phase %d %s", state.iteration, state.phase,
                         " ".join(f"{k}={v:.4f}" for k, v in report.row().items()))
            if evaluate is not None and train_cfg.eval_every and state.iteration % train_cfg.eval_every == 0:
                snap = {"iteration": state.iteration, "phase": state.phase, **evaluate(state.eval_networks())}
                snapshots.append(snap)
                if out is not None:
                    with open(out / "metrics.jsonl", "a") as fh:
                        fh.write(json.dumps(snap, sort_keys=True) + "\n")
            if out is not None and train_cfg.checkpoint_every and state.iteration % train_cfg.checkpoint_every == 0:
                save_checkpoint(state_checkpoint(state, data.vocab, extra),
                                out / "checkpoints" / f"iter_{state.iteration:07d}.zip")
    finally:
        if log_fh:
            log_fh.close()
    ckpt = state_checkpoint(state, data.vocab, extra)
    if out is not None:
        save_checkpoint(ckpt, out / "final.zip")
    return TrainResult(ckpt, state, rows, snapshots, tmap)
