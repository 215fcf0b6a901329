"""Pretrained-GAN -> I2I weight transfer, freeze policies and the checkpoint format.

Checkpoint file layout (a zip container, entries written in sorted order with a
fixed timestamp so identical states give identical bytes)::

    manifest.json                 format id, version, flat ArchConfig, vocabulary,
                                  iteration, array index, RNG state, extras
    arrays/<network>/<name>.npy   one little-endian float32 array per parameter
                                  or buffer (the .npy header carries the shape)
"""
from __future__ import annotations

import base64
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ArchConfig, from_flat, to_flat
from .data import ClassVocabulary
from .models import (ROLES, _CLASSES, NetworkParams, Networks, build_network, head_names,
                     load_network_params, network_params)

FORMAT = "deepi2i-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    pass


class TransferError(ValueError):
    pass


# -- checkpoint -----------------------------------------------------------------------

@dataclass
class Checkpoint:
    arch: ArchConfig
    networks: dict[str, NetworkParams]
    vocab: ClassVocabulary | None = None
    iteration: int = 0
    ema: NetworkParams | None = None
    rng_state: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def kind(self) -> str:
        return "i2i" if "encoder" in self.networks else "gan"

    def array(self, network: str, name: str) -> np.ndarray:
        return self.networks[network].arrays[name]


def checkpoint_from_networks(nets: Networks, roles=ROLES, **kw) -> Checkpoint:
    params = {r: network_params(getattr(nets, r), r, nets.cfg) for r in roles}
    return Checkpoint(arch=nets.cfg, networks=params, **kw)


def networks_from_checkpoint(ckpt: Checkpoint, use_ema: bool = False) -> Networks:
    """Instantiate the full network set and load every network stored in ``ckpt``."""
    nets = Networks(ckpt.arch, **{r: build_network(ckpt.arch, r, 0) for r in ROLES})
    for role, params in ckpt.networks.items():
        load_network_params(getattr(nets, role), params)
    if use_ema and ckpt.ema is not None:
        load_network_params(nets.generator, ckpt.ema)
    return nets


def _write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype="<f4"), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    groups = dict(ckpt.networks)
    if ckpt.ema is not None:
        groups["ema_generator"] = ckpt.ema
    index = {g: sorted(p.arrays) for g, p in sorted(groups.items())}
    for g, p in groups.items():
        for k, arr in p.arrays.items():
            if arr.dtype != np.float32:
                raise CheckpointError(f"{g}.{k}: only float32 arrays are stored, got {arr.dtype}")
    manifest = {
        "format": FORMAT, "version": ckpt.version, "arch": to_flat(ckpt.arch),
        "vocab": ckpt.vocab.names if ckpt.vocab is not None else None,
        "iteration": int(ckpt.iteration), "arrays": index, "rng": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _write(zf, "manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode())
        for g in sorted(groups):
            for k in index[g]:
                _write(zf, f"arrays/{g}/{k}.npy", _npy_bytes(groups[g].arrays[k]))
    tmp.replace(path)
    return path


def _meta_shapes(cfg: ArchConfig, role: str) -> dict[str, tuple]:
    with torch.device("meta"):
        net = _CLASSES[role](cfg)
    return {k: tuple(v.shape) for k, v in net.state_dict().items()}


def load_checkpoint(path, arch: ArchConfig | None = None) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != FORMAT:
                raise CheckpointError(f"{path}: not a {FORMAT} file")
            if manifest.get("version") != VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {manifest.get('version')} "
                                      f"(this build reads version {VERSION})")
            cfg = from_flat(ArchConfig, manifest["arch"])
            groups = {}
            for g, names in manifest["arrays"].items():
                arrays = {}
                for k in names:
                    with zf.open(f"arrays/{g}/{k}.npy") as fh:
                        arrays[k] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
                groups[g] = NetworkParams(g, arrays, cfg.fingerprint())
    except (zipfile.BadZipFile, KeyError, EOFError, ValueError, OSError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint ({exc})") from None
    if arch is not None and arch.fingerprint() != cfg.fingerprint():
        raise IncompatibleCheckpoint(f"{path}: stored architecture {cfg} does not match requested {arch}")
    ema = groups.pop("ema_generator", None)
    if ema is not None:
        ema.role = "generator"
    for role, params in list(groups.items()) + ([("generator", ema)] if ema else []):
        if role not in ROLES:
            raise CheckpointError(f"{path}: unknown network {role!r}")
        want = _meta_shapes(cfg, role)
        got = {k: a.shape for k, a in params.arrays.items()}
        if want != got:
            bad = sorted(set(want.items()) ^ set(got.items()))[:4]
            raise CheckpointError(f"{path}: {role} arrays inconsistent with stored architecture: {bad}")
    vocab = ClassVocabulary(manifest["vocab"]) if manifest.get("vocab") is not None else None
    return Checkpoint(arch=cfg, networks=groups, vocab=vocab, iteration=manifest["iteration"],
                      ema=ema, rng_state=manifest.get("rng", {}), extra=manifest.get("extra", {}),
                      version=manifest["version"])


def encode_rng(gen: torch.Generator) -> str:
    return base64.b64encode(gen.get_state().numpy().tobytes()).decode()


def decode_rng(blob: str) -> torch.Generator:
    gen = torch.Generator()
    gen.set_state(torch.frombuffer(bytearray(base64.b64decode(blob)), dtype=torch.uint8))
    return gen


# -- transfer map ---------------------------------------------------------------------

@dataclass(frozen=True)
class TransferEntry:
    source_network: str
    source_name: str
    target_network: str
    target_name: str
    shape: tuple


@dataclass(frozen=True)
class TransferFlags:
    encoder: bool = True
    generator: bool = True
    discriminator: bool = True

    @classmethod
    def parse(cls, text: str) -> "TransferFlags":
        """'enc,gen,dis' style: list the networks to initialise from the pretrained GAN."""
        items = {t.strip().lower() for t in text.split(",") if t.strip()} - {"none"}
        names = {"enc": "encoder", "encoder": "encoder", "gen": "generator", "generator": "generator",
                 "dis": "discriminator", "disc": "discriminator", "discriminator": "discriminator"}
        unknown = items - set(names)
        if unknown:
            raise TransferError(f"unknown transfer flags {sorted(unknown)}; use enc,gen,dis")
        chosen = {names[i] for i in items}
        return cls(**{k: k in chosen for k in ("encoder", "generator", "discriminator")})

    def label(self) -> str:
        on = [n[:3] for n in ("encoder", "generator", "discriminator") if getattr(self, n)]
        return ",".join(on) or "none"

    def any(self) -> bool:
        return self.encoder or self.generator or self.discriminator


@dataclass
class TransferMap:
    entries: list[TransferEntry]
    skipped: list[tuple[str, str, str]]          # (source name, target network, reason)
    flags: TransferFlags
    source: Checkpoint | None = None

    def for_target(self, network: str) -> list[TransferEntry]:
        return [e for e in self.entries if e.target_network == network]

    def skipped_for(self, network: str) -> list[str]:
        return [s for s, t, _ in self.skipped if t == network]


def build_transfer_map(pretrained: Checkpoint, target_cfg: ArchConfig,
                       flags: TransferFlags = TransferFlags()) -> TransferMap:
    src_cfg = pretrained.arch
    if src_cfg.transfer_signature() != target_cfg.transfer_signature():
        raise IncompatibleCheckpoint(
            "pretrained architecture is not transferable to the target: "
            f"(resolution, width, bottleneck, blocks, z_dim, embed_dim, sn, attention) "
            f"{src_cfg.transfer_signature()} vs {target_cfg.transfer_signature()}")
    for role in ("generator", "discriminator"):
        if role not in pretrained.networks:
            raise IncompatibleCheckpoint(f"pretrained checkpoint lacks a {role}")
    targets = {r: _meta_shapes(target_cfg, r) for r in ("encoder", "generator", "discriminator")}
    routes = [("discriminator", "discriminator"), ("discriminator", "encoder"), ("generator", "generator")]
    entries, skipped, seen = [], [], set()
    for src_net, tgt_net in routes:
        enabled = getattr(flags, tgt_net)
        src = pretrained.networks[src_net].arrays
        heads = head_names(src) if tgt_net == "encoder" else set()
        for name in sorted(src):
            shape = tuple(src[name].shape)
            if not enabled:
                skipped.append((f"{src_net}/{name}", tgt_net, f"transfer into {tgt_net} disabled"))
            elif name in heads:
                skipped.append((f"{src_net}/{name}", tgt_net, "encoder has no projection head"))
            elif name not in targets[tgt_net]:
                skipped.append((f"{src_net}/{name}", tgt_net, "no parameter of that name in target"))
            elif targets[tgt_net][name] != shape:
                reason = ("class count differs; re-initialised" if name.endswith("embed.weight")
                          else f"shape {shape} != target {targets[tgt_net][name]}")
                skipped.append((f"{src_net}/{name}", tgt_net, reason))
            else:
                key = (tgt_net, name)
                if key in seen:
                    raise TransferError(f"target {tgt_net}.{name} mapped twice")
                seen.add(key)
                entries.append(TransferEntry(src_net, name, tgt_net, name, shape))
    if not entries and flags.encoder and flags.generator and flags.discriminator:
        raise TransferError("transfer map is empty although every network was flagged for transfer")
    return TransferMap(entries, skipped, flags, source=pretrained)


def apply_transfer(tmap: TransferMap, nets: Networks) -> Networks:
    if tmap.source is None:
        raise TransferError("transfer map carries no source checkpoint")
    for e in tmap.entries:
        state = getattr(nets, e.target_network).state_dict()
        value = tmap.source.array(e.source_network, e.source_name)
        target = state.get(e.target_name)
        if target is None or tuple(target.shape) != tuple(value.shape) or tuple(value.shape) != e.shape:
            raise TransferError(f"shape clash applying {e}: map is stale or corrupted")
        with torch.no_grad():
            target.copy_(torch.from_numpy(np.ascontiguousarray(value)))
    return nets


# -- freeze policy --------------------------------------------------------------------

@dataclass(frozen=True)
class FreezePolicy:
    phase: int
    trainable: frozenset

    def is_trainable(self, network: str) -> bool:
        return network in self.trainable


def freeze_policy(phase: int) -> FreezePolicy:
    """Phase 1 trains adaptors + discriminator; phase 2 adds the generator. The encoder never trains."""
    if phase == 1:
        return FreezePolicy(1, frozenset({"adaptors", "discriminator"}))
    if phase == 2:
        return FreezePolicy(2, frozenset({"adaptors", "generator", "discriminator"}))
    raise ValueError(f"phase must be 1 or 2, got {phase!r}")
