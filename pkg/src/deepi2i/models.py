"""Encoder, adaptors, generator and discriminator built from an ArchConfig.

The discriminator and encoder share one residual backbone class so their
parameter names coincide; the discriminator only adds the projection head
(``linear`` and ``embed``). The generator is a BigGAN-style residual stack with
class-conditional batch norm whose intermediate activations receive the
adapted encoder features by a weighted sum.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ArchConfig, ConfigError

ROLES = ("encoder", "adaptors", "generator", "discriminator")
HEAD_PREFIXES = ("linear.", "embed.")


class ShapeError(ValueError):
    pass


class LabelError(ValueError):
    pass


# -- feature pyramids -----------------------------------------------------------------

@dataclass
class HierarchicalFeatures(Mapping):
    """Ordered pyramid of activations keyed by tap level (shallow first)."""

    levels: dict[int, torch.Tensor]
    source: str = "encoder"

    def __getitem__(self, level):
        return self.levels[level]

    def __iter__(self):
        return iter(sorted(self.levels))

    def __len__(self):
        return len(self.levels)

    @property
    def batch_size(self) -> int:
        sizes = {v.shape[0] for v in self.levels.values()}
        if len(sizes) != 1:
            raise ShapeError(f"pyramid levels disagree on batch size: {sorted(sizes)}")
        return sizes.pop()

    def shapes(self) -> dict[int, tuple[int, ...]]:
        return {lv: tuple(self.levels[lv].shape[1:]) for lv in self}

    def detach(self) -> "HierarchicalFeatures":
        return HierarchicalFeatures({k: v.detach() for k, v in self.levels.items()}, self.source)


def check_pyramid(feats: HierarchicalFeatures, cfg: ArchConfig, adapted: bool = False) -> None:
    for lv in feats:
        want = cfg.adapted_shape(lv) if adapted else cfg.tap_shape(lv)
        got = tuple(feats[lv].shape[1:])
        if got != want:
            raise ShapeError(f"level {lv}: expected {want}, got {got}")
    feats.batch_size


def fuse(gen_activation: torch.Tensor, adapted: torch.Tensor, weight: float) -> torch.Tensor:
    """Weighted sum of a generator activation and an adapted encoder feature."""
    if gen_activation.shape != adapted.shape:
        raise ShapeError(f"cannot fuse {tuple(adapted.shape)} into {tuple(gen_activation.shape)}")
    if weight == 0:
        return gen_activation
    return gen_activation + weight * adapted


# -- layers ---------------------------------------------------------------------------

def _power_iteration(w: torch.Tensor, u: torch.Tensor, update: bool, eps: float = 1e-12):
    w_mat = w.reshape(w.shape[0], -1)
    with torch.no_grad():
        v = F.normalize(torch.mv(w_mat.t(), u), dim=0, eps=eps)
        u_new = F.normalize(torch.mv(w_mat, v), dim=0, eps=eps)
        if update:
            u.copy_(u_new)
    return torch.dot(u_new, torch.mv(w_mat, v))


class _SpectralNorm:
    """Mixin: divides ``weight`` by its largest singular value (one power step per call)."""

    def _init_sn(self, enabled: bool):
        self.use_sn = enabled
        if enabled:
            self.register_buffer("u", F.normalize(torch.ones(self.weight.shape[0]), dim=0))

    def effective_weight(self) -> torch.Tensor:
        if not self.use_sn:
            return self.weight
        sigma = _power_iteration(self.weight, self.u, update=self.training)
        # an all-zero weight has sigma 0; keep it zero instead of 0/0
        return self.weight / sigma.clamp_min(1e-12)


class Conv2d(nn.Conv2d, _SpectralNorm):
    def __init__(self, cin, cout, kernel_size=3, padding=None, sn=False, bias=True):
        super().__init__(cin, cout, kernel_size, padding=kernel_size // 2 if padding is None else padding, bias=bias)
        self._init_sn(sn)

    def forward(self, x):
        return self._conv_forward(x, self.effective_weight(), self.bias)


class Linear(nn.Linear, _SpectralNorm):
    def __init__(self, fin, fout, sn=False, bias=True):
        super().__init__(fin, fout, bias=bias)
        self._init_sn(sn)

    def forward(self, x):
        return F.linear(x, self.effective_weight(), self.bias)


class BatchNorm2d(nn.Module):
    """Batch norm with float running statistics only (no integer step counter)."""

    def __init__(self, channels, affine=True, momentum=0.1, eps=1e-4):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        if affine:
            self.weight = nn.Parameter(torch.ones(channels))
            self.bias = nn.Parameter(torch.zeros(channels))
        else:
            self.weight = self.bias = None
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x):
        return F.batch_norm(x, self.running_mean, self.running_var, self.weight, self.bias,
                            self.training, self.momentum, self.eps)


class ConditionalBatchNorm2d(nn.Module):
    """Per-sample gain and bias predicted from the conditioning vector."""

    def __init__(self, channels, cond_dim, sn=False):
        super().__init__()
        self.gain = Linear(cond_dim, channels, sn=sn, bias=False)
        self.bias = Linear(cond_dim, channels, sn=sn, bias=False)
        self.bn = BatchNorm2d(channels, affine=False)

    def forward(self, x, y):
        gain = (1 + self.gain(y)).view(y.shape[0], -1, 1, 1)
        bias = self.bias(y).view(y.shape[0], -1, 1, 1)
        return self.bn(x) * gain + bias


class Attention(nn.Module):
    """Self-attention over spatial positions (SAGAN layout)."""

    def __init__(self, ch, sn=False):
        super().__init__()
        self.ch = ch
        self.theta = Conv2d(ch, ch // 8, 1, padding=0, sn=sn, bias=False)
        self.phi = Conv2d(ch, ch // 8, 1, padding=0, sn=sn, bias=False)
        self.g = Conv2d(ch, ch // 2, 1, padding=0, sn=sn, bias=False)
        self.o = Conv2d(ch // 2, ch, 1, padding=0, sn=sn, bias=False)
        self.gamma = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        n, _, h, w = x.shape
        theta = self.theta(x).view(n, self.ch // 8, h * w)
        phi = self.phi(x).view(n, self.ch // 8, h * w)
        g = self.g(x).view(n, self.ch // 2, h * w)
        beta = F.softmax(torch.bmm(theta.transpose(1, 2), phi), -1)
        o = self.o(torch.bmm(g, beta.transpose(1, 2)).view(n, self.ch // 2, h, w))
        return x + self.gamma * o


class DBlock(nn.Module):
    def __init__(self, cin, cout, preactivation=True, downsample=True, sn=False):
        super().__init__()
        self.preactivation, self.downsample = preactivation, downsample
        self.conv1 = Conv2d(cin, cout, sn=sn)
        self.conv2 = Conv2d(cout, cout, sn=sn)
        self.learnable_sc = cin != cout or downsample
        if self.learnable_sc:
            self.conv_sc = Conv2d(cin, cout, 1, padding=0, sn=sn)

    def shortcut(self, x):
        if self.preactivation:
            if self.learnable_sc:
                x = self.conv_sc(x)
            if self.downsample:
                x = F.avg_pool2d(x, 2)
        else:
            if self.downsample:
                x = F.avg_pool2d(x, 2)
            if self.learnable_sc:
                x = self.conv_sc(x)
        return x

    def forward(self, x):
        h = F.relu(x) if self.preactivation else x
        h = self.conv2(F.relu(self.conv1(h)))
        if self.downsample:
            h = F.avg_pool2d(h, 2)
        return h + self.shortcut(x)


class GBlock(nn.Module):
    def __init__(self, cin, cout, cond_dim, sn=False):
        super().__init__()
        self.bn1 = ConditionalBatchNorm2d(cin, cond_dim, sn=sn)
        self.conv1 = Conv2d(cin, cout, sn=sn)
        self.bn2 = ConditionalBatchNorm2d(cout, cond_dim, sn=sn)
        self.conv2 = Conv2d(cout, cout, sn=sn)
        self.conv_sc = Conv2d(cin, cout, 1, padding=0, sn=sn)

    def forward(self, x, y):
        h = F.interpolate(F.relu(self.bn1(x, y)), scale_factor=2, mode="nearest")
        h = self.conv1(h)
        h = self.conv2(F.relu(self.bn2(h, y)))
        return h + self.conv_sc(F.interpolate(x, scale_factor=2, mode="nearest"))


# -- networks -------------------------------------------------------------------------

def _check_labels(c: torch.Tensor, num_classes: int) -> None:
    if c.numel() and (int(c.min()) < 0 or int(c.max()) >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{int(c.min())}, {int(c.max())}]")


def _check_images(x: torch.Tensor, cfg: ArchConfig) -> None:
    if x.dim() != 4 or tuple(x.shape[1:]) != (3, cfg.resolution, cfg.resolution):
        raise ShapeError(f"expected images of shape (N, 3, {cfg.resolution}, {cfg.resolution}), "
                         f"got {tuple(x.shape)}")


class Encoder(nn.Module):
    """Residual downsampling backbone returning the activations at each tap level."""

    role = "encoder"

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        w, sn = cfg.base_width, cfg.spectral_norm
        chans = [3] + [cfg.encoder_multiplier(i) * w for i in range(cfg.num_blocks)]
        self.blocks = nn.ModuleList(
            DBlock(chans[i], chans[i + 1], preactivation=i > 0, sn=sn) for i in range(cfg.num_blocks))
        self.attn_after = None
        if cfg.attention_resolution:
            for i in range(cfg.num_blocks):
                if cfg.resolution >> (i + 1) == cfg.attention_resolution:
                    self.attn_after = i
                    self.attention = Attention(chans[i + 1], sn=sn)
        first = cfg.num_blocks - cfg.num_levels
        self.tap_of_block = {first + k: lv for k, lv in enumerate(cfg.levels)}

    def backbone(self, x: torch.Tensor):
        _check_images(x, self.cfg)
        feats = {}
        h = x
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i == self.attn_after:
                h = self.attention(h)
            if i in self.tap_of_block:
                feats[self.tap_of_block[i]] = h
        return h, feats

    def forward(self, x: torch.Tensor) -> HierarchicalFeatures:
        _, feats = self.backbone(x)
        return HierarchicalFeatures(feats, source=self.role)


class Discriminator(Encoder):
    """Encoder backbone plus an unconditional linear head and a projection embedding."""

    role = "discriminator"

    def __init__(self, cfg: ArchConfig):
        super().__init__(cfg)
        top = cfg.top_multiplier * cfg.base_width
        self.linear = Linear(top, 1, sn=cfg.spectral_norm)
        self.embed = nn.Embedding(cfg.num_classes, top)

    def forward(self, x: torch.Tensor, c: torch.Tensor):
        _check_labels(c, self.cfg.num_classes)
        h, feats = self.backbone(x)
        h = torch.sum(F.relu(h), dim=(2, 3))
        score = self.linear(h).squeeze(1) + torch.sum(self.embed(c) * h, dim=1)
        return score, HierarchicalFeatures(feats, source=self.role)


class SubAdaptor(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 -> conv1x1 (channel doubling); deepest level: two conv3x3."""

    def __init__(self, cin, cout, deepest):
        super().__init__()
        self.deepest = deepest
        self.conv1 = Conv2d(cin, cin)
        self.conv2 = Conv2d(cin, cin if not deepest else cout)
        if not deepest:
            self.conv3 = Conv2d(cin, cout, 1, padding=0)

    def forward(self, x):
        if self.deepest:
            return self.conv2(self.conv1(x))
        return self.conv3(self.conv2(F.relu(self.conv1(x))))


class Adaptors(nn.Module):
    """One sub-adaptor per active tap level.

    In ``direct`` mode there are no parameters: features are summed into the
    generator after a fixed channel duplication (the no-adaptor ablation).
    """

    role = "adaptors"

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        self.mode = cfg.adaptor_mode
        self.levels = cfg.active_adaptor_levels
        deepest = cfg.levels[-1]
        self.sub = nn.ModuleDict()
        if self.mode == "learned":
            for lv in self.levels:
                cin, cout = cfg.tap_shape(lv)[0], cfg.adapted_shape(lv)[0]
                self.sub[str(lv)] = SubAdaptor(cin, cout, deepest=lv == deepest)

    def forward(self, feats: HierarchicalFeatures) -> HierarchicalFeatures:
        missing = [lv for lv in self.levels if lv not in feats]
        if missing:
            raise ShapeError(f"adaptor levels {missing} absent from features (have {list(feats)})")
        check_pyramid(HierarchicalFeatures({lv: feats[lv] for lv in self.levels}), self.cfg)
        out = {}
        for lv in self.levels:
            if self.mode == "learned":
                out[lv] = self.sub[str(lv)](feats[lv])
            else:
                reps = self.cfg.adapted_shape(lv)[0] // self.cfg.tap_shape(lv)[0]
                out[lv] = feats[lv].repeat(1, reps, 1, 1)
        return HierarchicalFeatures(out, source="adaptors")


class Generator(nn.Module):
    """Class-conditional residual generator with fusion points at the tap resolutions."""

    role = "generator"

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        w, sn = cfg.base_width, cfg.spectral_norm
        self.fusion_weights = {lv: cfg.fusion_weight for lv in cfg.levels}
        self.z_sizes = [len(c) for c in np.array_split(np.arange(cfg.z_dim), cfg.num_blocks + 1)]
        self.embed = nn.Embedding(cfg.num_classes, cfg.embed_dim)
        b = cfg.bottleneck
        self.top_ch = cfg.generator_multiplier(b) * w
        self.linear = Linear(self.z_sizes[0], self.top_ch * b * b, sn=sn)
        blocks, res = [], b
        self.attn_after = None
        for i in range(cfg.num_blocks):
            cin, cout = cfg.generator_multiplier(res) * w, cfg.generator_multiplier(res * 2) * w
            blocks.append(GBlock(cin, cout, cfg.embed_dim + self.z_sizes[i + 1], sn=sn))
            res *= 2
            if cfg.attention_resolution == res and res < cfg.resolution:
                self.attn_after = i
                self.attention = Attention(cout, sn=sn)
        self.blocks = nn.ModuleList(blocks)
        self.out_bn = BatchNorm2d(w)
        self.out_conv = Conv2d(w, 3, sn=sn)
        self.level_at_res = {t.resolution: t.level for t in cfg.tap_levels}

    def class_embedding(self, c: torch.Tensor) -> torch.Tensor:
        _check_labels(c, self.cfg.num_classes)
        return self.embed(c)

    def _fuse(self, h, res, adapted):
        lv = self.level_at_res.get(res)
        if adapted is None or lv is None or lv not in adapted:
            return h
        return fuse(h, adapted[lv], self.fusion_weights[lv])

    def forward(self, adapted: HierarchicalFeatures | None, z: torch.Tensor,
                c: torch.Tensor | None = None, embedding: torch.Tensor | None = None) -> torch.Tensor:
        if embedding is None:
            if c is None:
                raise LabelError("either labels or an explicit class embedding is required")
            embedding = self.class_embedding(c)
        if z.dim() != 2 or z.shape[1] != self.cfg.z_dim:
            raise ShapeError(f"noise must have shape (N, {self.cfg.z_dim}), got {tuple(z.shape)}")
        if adapted is not None:
            check_pyramid(adapted, self.cfg, adapted=True)
            if adapted.batch_size != z.shape[0]:
                raise ShapeError("adapted features and noise disagree on batch size")
        zs = torch.split(z, self.z_sizes, dim=1)
        b = self.cfg.bottleneck
        h = self.linear(zs[0]).view(z.shape[0], self.top_ch, b, b)
        h = self._fuse(h, b, adapted)
        res = b
        for i, block in enumerate(self.blocks):
            h = block(h, torch.cat([embedding, zs[i + 1]], dim=1))
            res *= 2
            if i == self.attn_after:
                h = self.attention(h)
            h = self._fuse(h, res, adapted)
        return torch.tanh(self.out_conv(F.relu(self.out_bn(h))))


# -- construction ---------------------------------------------------------------------

def role_seed(seed: int, role: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(role.encode())) % (2 ** 63)


def init_weights(module: nn.Module) -> None:
    """Orthogonal init for every conv/linear/embedding weight, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear, nn.Embedding)):
            nn.init.orthogonal_(m.weight)
            if getattr(m, "bias", None) is not None:
                nn.init.zeros_(m.bias)


_CLASSES = {"encoder": Encoder, "adaptors": Adaptors, "generator": Generator, "discriminator": Discriminator}


def build_network(cfg: ArchConfig, role: str, seed: int) -> nn.Module:
    if role not in _CLASSES:
        raise ConfigError(f"unknown network role {role!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(role_seed(seed, role))
        net = _CLASSES[role](cfg)
        init_weights(net)
    return net


@dataclass
class Networks:
    cfg: ArchConfig
    encoder: Encoder
    adaptors: Adaptors
    generator: Generator
    discriminator: Discriminator

    def by_role(self) -> dict[str, nn.Module]:
        return {r: getattr(self, r) for r in ROLES}

    def __iter__(self) -> Iterator[tuple[str, nn.Module]]:
        return iter(self.by_role().items())

    def to(self, *args, **kw) -> "Networks":
        for _, m in self:
            m.to(*args, **kw)
        return self

    def translate(self, x, z, c=None, embedding=None) -> torch.Tensor:
        return self.generator(self.adaptors(self.encoder(x)), z, c=c, embedding=embedding)


def build_networks(cfg: ArchConfig, seed: int = 0) -> Networks:
    cfg.validate()
    return Networks(cfg, **{r: build_network(cfg, r, seed) for r in ROLES})


# -- named parameter maps -------------------------------------------------------------

@dataclass
class NetworkParams:
    role: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    arch_fingerprint: str = ""

    def names(self) -> set[str]:
        return set(self.arrays)


def network_params(module: nn.Module, role: str, cfg: ArchConfig) -> NetworkParams:
    arrays = {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}
    return NetworkParams(role, arrays, cfg.fingerprint())


def load_network_params(module: nn.Module, params: NetworkParams) -> None:
    state = module.state_dict()
    if set(state) != params.names():
        extra, missing = params.names() - set(state), set(state) - params.names()
        raise ShapeError(f"{params.role}: parameter names differ (extra={sorted(extra)[:5]}, "
                         f"missing={sorted(missing)[:5]})")
    for k, arr in params.arrays.items():
        if tuple(state[k].shape) != arr.shape:
            raise ShapeError(f"{params.role}.{k}: shape {arr.shape} vs {tuple(state[k].shape)}")
    module.load_state_dict({k: torch.from_numpy(np.ascontiguousarray(v)).to(state[k].dtype)
                            for k, v in params.arrays.items()})


def head_names(names) -> set[str]:
    return {n for n in names if n.startswith(HEAD_PREFIXES)}
