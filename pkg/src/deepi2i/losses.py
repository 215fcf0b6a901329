"""Adversarial, feature-reconstruction and combined objectives."""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .config import LossConfig
from .models import HierarchicalFeatures, Networks, ShapeError


class TrainingDivergence(FloatingPointError):
    """A loss became NaN or infinite; carries the offending report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _nonempty(t: torch.Tensor, name: str) -> None:
    if t.numel() == 0:
        raise ValueError(f"{name}: empty batch")


def adv_loss_d(score_real: torch.Tensor, score_fake: torch.Tensor, kind: str = "hinge") -> torch.Tensor:
    _nonempty(score_real, "score_real")
    _nonempty(score_fake, "score_fake")
    if kind == "hinge":
        return F.relu(1.0 - score_real).mean() + F.relu(1.0 + score_fake).mean()
    if kind == "logistic":
        # -log sigmoid(r) = softplus(-r);  -log(1 - sigmoid(f)) = softplus(f)
        return F.softplus(-score_real).mean() + F.softplus(score_fake).mean()
    raise ValueError(f"unknown adversarial loss kind {kind!r}")


def adv_loss_g(score_fake: torch.Tensor, kind: str = "hinge") -> torch.Tensor:
    _nonempty(score_fake, "score_fake")
    if kind == "hinge":
        return -score_fake.mean()
    if kind == "logistic":
        return F.softplus(-score_fake).mean()
    raise ValueError(f"unknown adversarial loss kind {kind!r}")


def rec_loss(feats_x: HierarchicalFeatures, feats_y: HierarchicalFeatures, alpha: dict[int, float],
             reduction: str = "mean", per_level: dict | None = None) -> torch.Tensor:
    """Weighted L1 distance between two discriminator feature pyramids.

    ``reduction='mean'`` averages |diff| over elements at each level;
    ``'sum'`` uses the plain L1 norm per sample, averaged over the batch.
    """
    if list(feats_x) != list(feats_y):
        raise ShapeError(f"pyramid levels differ: {list(feats_x)} vs {list(feats_y)}")
    if set(alpha) != set(feats_x):
        raise ShapeError(f"alpha levels {sorted(alpha)} do not match pyramid levels {list(feats_x)}")
    total = None
    for lv in feats_x:
        a, b = feats_x[lv], feats_y[lv]
        if a.shape != b.shape:
            raise ShapeError(f"level {lv}: {tuple(a.shape)} vs {tuple(b.shape)}")
        diff = (a - b).abs()
        term = diff.mean() if reduction == "mean" else diff.sum() / a.shape[0]
        if per_level is not None:
            per_level[lv] = float(term.detach())
        term = alpha[lv] * term
        total = term if total is None else total + term
    return total


def orthogonal_reg(module: torch.nn.Module) -> torch.Tensor:
    """Sum of squared off-diagonal entries of W W^T over every matrix-shaped weight."""
    terms = []
    for name, p in module.named_parameters():
        if p.dim() < 2 or name.endswith("embed.weight"):
            continue
        w = p.reshape(p.shape[0], -1)
        gram = w @ w.t()
        terms.append(((gram * (1 - torch.eye(w.shape[0], dtype=w.dtype))) ** 2).sum())
    if not terms:
        return torch.zeros(())
    return torch.stack(terms).sum()


@dataclass
class LossReport:
    adv_g: float
    adv_d: float
    rec: float
    total_g: float
    total_d: float
    rec_levels: dict[int, float] = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        return {"adv_g": self.adv_g, "adv_d": self.adv_d, "rec": self.rec,
                "total_g": self.total_g, "total_d": self.total_d}


def total_losses(adv_g: float, adv_d: float, rec: float, cfg: LossConfig,
                 rec_levels: dict | None = None) -> LossReport:
    values = {"adv_g": float(adv_g), "adv_d": float(adv_d), "rec": float(rec)}
    report = LossReport(
        adv_g=values["adv_g"], adv_d=values["adv_d"], rec=values["rec"],
        total_g=cfg.lambda_adv * values["adv_g"] + cfg.lambda_rec * values["rec"],
        total_d=cfg.lambda_adv * values["adv_d"],
        rec_levels=dict(rec_levels or {}))
    bad = [k for k, v in report.row().items() if not math.isfinite(v)]
    if bad:
        raise TrainingDivergence(f"non-finite loss terms {bad}: {report.row()}", report)
    return report


@contextlib.contextmanager
def frozen(module: torch.nn.Module):
    """Temporarily stop gradient flow into ``module``'s parameters."""
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, f in zip(module.parameters(), flags):
            p.requires_grad_(f)


def generator_objective(nets: Networks, x: torch.Tensor, z: torch.Tensor, c: torch.Tensor,
                        cfg: LossConfig, encoder_grad: bool = False, ortho_module=None):
    """Generator-side objective for one batch of source images ``x`` translated to ``c``.

    Returns ``(loss_tensor, parts)`` where ``parts`` holds detached scalars
    and the generated images. Discriminator parameters receive no gradient.
    """
    if encoder_grad:
        feats = nets.encoder(x)
    else:
        with torch.no_grad():
            feats = nets.encoder(x)
    fake = nets.generator(nets.adaptors(feats), z, c)
    d = nets.discriminator
    with frozen(d):
        score_fake, feats_fake = d(fake, c)
        with torch.no_grad():
            _, feats_src = d(x, c)
    adv = adv_loss_g(score_fake, cfg.adv_loss_kind)
    per_level = {}
    rec = rec_loss(feats_src.detach(), feats_fake, cfg.alphas(feats_src), cfg.rec_reduction, per_level)
    loss = cfg.lambda_adv * adv + cfg.lambda_rec * rec
    ortho = None
    if cfg.orthogonal_reg_strength > 0 and ortho_module is not None:
        ortho = orthogonal_reg(ortho_module)
        loss = loss + cfg.orthogonal_reg_strength * ortho
    parts = {"adv_g": adv.detach(), "rec": rec.detach(), "rec_levels": per_level, "fake": fake}
    if ortho is not None:
        parts["ortho"] = ortho.detach()
    return loss, parts


def discriminator_objective(disc, real, c_real, fake, c_fake, cfg: LossConfig):
    score_real, _ = disc(real, c_real)
    score_fake, _ = disc(fake.detach(), c_fake)
    adv = adv_loss_d(score_real, score_fake, cfg.adv_loss_kind)
    return cfg.lambda_adv * adv, adv.detach()
