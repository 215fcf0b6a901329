"""Command-line entry points: pretrain, train, translate, interpolate, evaluate, ablate.

Configuration is an INI file with one section per dataclass ([arch], [train],
[loss], [data], [eval], [run], [ablate]); flags override file values. The fully
resolved configuration is written to ``<out>/config.ini`` before any work, and
re-running with ``--config <out>/config.ini`` reproduces the outputs.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ArchConfig, ConfigError, LossConfig, TrainConfig, from_flat, to_flat
from .data import DatasetHandle, load_dataset, materialize, prepare_image, subsample, synth_toy_dataset, to_uint8
from .engine import run_training
from .metrics import (ClassifierConfig, MetricReport, evaluate_translation, identity_generator, make_extractor,
                      mfid_evaluator, train_classifier, translator)
from .models import Networks
from .transfer import TransferFlags, load_checkpoint, networks_from_checkpoint

log = logging.getLogger("deepi2i")


@dataclass(frozen=True)
class DataConfig:
    dataset: str = "toy"            # folder-per-class root, or "toy" for the synthetic shapes
    toy_classes: int = 8
    toy_per_class: int = 200
    toy_family_offset: int = 0
    toy_seed: int = 0
    split_seed: int = 0
    fraction: float = 1.0
    fraction_seed: int = 0
    materialize: str = ""           # if set, also write the synthetic dataset as root/<class>/<image>.png


@dataclass(frozen=True)
class EvalConfig:
    n_gen_per_class: int = 64
    extractor: str = "randconv"
    extractor_seed: int = 0
    seed: int = 0
    use_ema: bool = False
    final_report: bool = True
    rc_fc: bool = True
    classifier_width: int = 16
    classifier_iterations: int = 300
    classifier_seed: int = 0


@dataclass(frozen=True)
class RunOptions:
    out: str = "runs/default"
    checkpoint: str = ""            # pretrained GAN for train/ablate; trained model for translate etc.
    scratch: bool = False
    transfer_flags: str = "enc,gen,dis"
    identity: bool = False          # evaluate: real test images stand in for translations
    inputs: str = ""                # translate/interpolate: comma-separated files or directories
    n_inputs: int = 4               # test images used when no inputs are given
    classes: str = "all"
    n_samples: int = 2
    class_a: str = ""
    class_b: str = ""
    steps: int = 8


@dataclass(frozen=True)
class AblateConfig:
    sweeps: str = ""                # comma list of: adaptor, transfer, depth, lambda_rec, data_fraction
    depth_blocks: tuple = (2, 3, 4, 5)
    data_fractions: str = "0.1,1.0"
    lambda_recs: str = "0.0,1.0"


SECTIONS = {"arch": ArchConfig, "train": TrainConfig, "loss": LossConfig, "data": DataConfig,
            "eval": EvalConfig, "run": RunOptions, "ablate": AblateConfig}
SWEEPS = ("adaptor", "transfer", "depth", "lambda_rec", "data_fraction")
TRANSFER_ROWS = ("none", "gen", "dis", "gen,dis", "enc,gen,dis")


@dataclass(frozen=True)
class RunConfig:
    arch: ArchConfig = ArchConfig()
    train: TrainConfig = TrainConfig()
    loss: LossConfig = LossConfig()
    data: DataConfig = DataConfig()
    eval: EvalConfig = EvalConfig()
    run: RunOptions = RunOptions()
    ablate: AblateConfig = AblateConfig()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            cp[name] = to_flat(getattr(self, name))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(text)
        unknown = set(cp.sections()) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}; valid: {list(SECTIONS)}")
        parts = {name: from_flat(SECTIONS[name], dict(cp[name])) if cp.has_section(name) else SECTIONS[name]()
                 for name in SECTIONS}
        return cls(**parts)


# -- config resolution ----------------------------------------------------------------

FLAG_KEYS = {
    "seed": ("train", "seed"),
    "out": ("run", "out"),
    "checkpoint": ("run", "checkpoint"),
    "dataset": ("data", "dataset"),
    "scratch": ("run", "scratch"),
    "transfer_flags": ("run", "transfer_flags"),
    "adaptor_levels": ("arch", "adaptor_levels"),
    "lambda_rec": ("loss", "lambda_rec"),
    "data_fraction": ("data", "fraction"),
    "n_gen_per_class": ("eval", "n_gen_per_class"),
    "iterations": ("train", "total_iterations"),
    "identity": ("run", "identity"),
    "inputs": ("run", "inputs"),
    "classes": ("run", "classes"),
    "n_samples": ("run", "n_samples"),
    "class_a": ("run", "class_a"),
    "class_b": ("run", "class_b"),
    "steps": ("run", "steps"),
    "sweep": ("ablate", "sweeps"),
    "materialize": ("data", "materialize"),
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    for flag, (section, key) in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if not cp.has_section(section):
            cp.add_section(section)
        if isinstance(value, bool):
            value = "true" if value else "false"
        cp[section][key] = str(value)
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value
    buf = io.StringIO()
    cp.write(buf)
    cfg = RunConfig.from_ini(buf.getvalue())
    cfg.arch.validate()
    return cfg


def echo_config(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.ini"
    path.write_text(f"# deepi2i {command}\n" + cfg.to_ini())
    return path


def keys_help() -> str:
    lines = ["configuration keys (section.key = default):"]
    for name, cls in SECTIONS.items():
        for key, value in to_flat(cls()).items():
            lines.append(f"  {name}.{key} = {value}")
    return "\n".join(lines)


# -- shared helpers -------------------------------------------------------------------

def make_dataset(cfg: DataConfig, resolution: int) -> DatasetHandle:
    if cfg.dataset == "toy":
        ds = synth_toy_dataset(cfg.toy_classes, cfg.toy_per_class, resolution, seed=cfg.toy_seed,
                               family_offset=cfg.toy_family_offset, split_seed=cfg.split_seed)
        if cfg.materialize:
            materialize(ds, cfg.materialize)
        return ds
    return load_dataset(cfg.dataset, resolution, split_seed=cfg.split_seed)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_report(report: MetricReport, out: Path, stem: str = "report") -> None:
    _write_text(out / f"{stem}.json", report.to_json() + "\n")
    _write_text(out / f"{stem}.csv", report.to_csv())


def _classifier_cfg(cfg: EvalConfig) -> ClassifierConfig | None:
    if not cfg.rc_fc:
        return None
    return ClassifierConfig(width=cfg.classifier_width, iterations=cfg.classifier_iterations,
                            seed=cfg.classifier_seed)


def _extractor(cfg: EvalConfig):
    return make_extractor(cfg.extractor, seed=cfg.extractor_seed) if cfg.extractor == "randconv" \
        else make_extractor(cfg.extractor)


def _save_png(img: torch.Tensor | np.ndarray, path: Path) -> np.ndarray:
    arr = to_uint8(img)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)
    return arr


def _tile(cells: list[list[np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate(row, axis=1) for row in cells], axis=0)


def sample_noise(seed: int, input_index: int, sample_index: int, z_dim: int) -> torch.Tensor:
    """Noise for one (input, sample) pair; shared by every target class."""
    state = np.random.SeedSequence([seed, input_index, sample_index]).generate_state(1)[0]
    return torch.randn(1, z_dim, generator=torch.Generator().manual_seed(int(state)))


def load_model(cfg: RunConfig) -> Networks:
    if not cfg.run.checkpoint:
        raise ConfigError("this command needs --checkpoint")
    nets = networks_from_checkpoint(load_checkpoint(cfg.run.checkpoint), use_ema=cfg.eval.use_ema)
    for _, m in nets:
        m.eval()
    return nets


def _class_index(vocab, name: str) -> int:
    return vocab.index(name)


def _input_images(cfg: RunConfig, nets: Networks) -> list[tuple[str, torch.Tensor]]:
    res = nets.cfg.resolution
    if cfg.run.inputs:
        files = []
        for item in cfg.run.inputs.split(","):
            p = Path(item.strip())
            files.extend(sorted(f for f in p.iterdir() if f.is_file()) if p.is_dir() else [p])
        out = []
        for f in files:
            with Image.open(f) as img:
                out.append((f.stem, torch.from_numpy(prepare_image(img, res))))
        return out
    ds = make_dataset(cfg.data, res)
    images, _ = ds.split("test")
    return [(f"test{i:03d}", torch.from_numpy(images[i])) for i in range(min(cfg.run.n_inputs, len(images)))]


@torch.no_grad()
def translate_one(nets: Networks, x: torch.Tensor, z: torch.Tensor, c: int | None = None,
                  embedding: torch.Tensor | None = None) -> torch.Tensor:
    labels = None if c is None else torch.tensor([c])
    return nets.translate(x.unsqueeze(0), z, c=labels, embedding=embedding)[0]


# -- commands -------------------------------------------------------------------------

def _training_data(cfg: RunConfig) -> tuple[DatasetHandle, DatasetHandle]:
    full = make_dataset(cfg.data, cfg.arch.resolution)
    return full, subsample(full, cfg.data.fraction, cfg.data.fraction_seed)


def cmd_pretrain(cfg: RunConfig):
    """Train the class-conditional GAN (generator + discriminator) on the source domain."""
    out = Path(cfg.run.out)
    _, data = _training_data(cfg)
    result = run_training(cfg.train, cfg.arch, cfg.loss, data, mode="gan", out_dir=out,
                          extra={"command": "pretrain", "dataset": data.source})
    log.info("pretrained checkpoint written to %s", out / "final.zip")
    return result.checkpoint


def _train_variant(cfg: RunConfig, full: DatasetHandle, data: DatasetHandle, out: Path,
                   real_classifier=None):
    pretrained = None
    flags = TransferFlags.parse(cfg.run.transfer_flags)
    if not cfg.run.scratch and flags.any():
        if not cfg.run.checkpoint:
            raise ConfigError("transfer requested but no pretrained --checkpoint given (use --scratch)")
        if not Path(cfg.run.checkpoint).exists():
            raise FileNotFoundError(f"pretrained checkpoint {cfg.run.checkpoint} does not exist")
        pretrained = load_checkpoint(cfg.run.checkpoint)
    extractor = _extractor(cfg.eval)
    evaluate = mfid_evaluator(full, cfg.eval.n_gen_per_class, extractor, cfg.eval.seed)
    label = "scratch" if pretrained is None else flags.label()
    result = run_training(cfg.train, cfg.arch, cfg.loss, data, pretrained=pretrained, flags=flags,
                          out_dir=out, evaluate=evaluate if cfg.train.eval_every else None,
                          extra={"command": "train", "dataset": data.source, "transfer": label})
    report = None
    if cfg.eval.final_report:
        nets = result.state.eval_networks() if cfg.eval.use_ema else result.state.nets
        report = evaluate_translation(translator(nets, full, cfg.eval.seed), full, cfg.eval.n_gen_per_class,
                                      extractor, _classifier_cfg(cfg.eval), real_classifier)
        report.notes["transfer"] = label
        report.notes["iterations"] = result.state.iteration
        write_report(report, out)
    return result, report


def cmd_train(cfg: RunConfig):
    full, data = _training_data(cfg)
    result, _ = _train_variant(cfg, full, data, Path(cfg.run.out))
    return result.checkpoint


def cmd_translate(cfg: RunConfig) -> list[Path]:
    """n_samples translations per (input, class); grid rows are inputs, column blocks are classes."""
    nets = load_model(cfg)
    vocab = load_checkpoint(cfg.run.checkpoint).vocab
    names = list(vocab.names) if cfg.run.classes == "all" else [s.strip() for s in cfg.run.classes.split(",")]
    classes = [_class_index(vocab, n) for n in names]
    out = Path(cfg.run.out) / "translations"
    written, rows = [], []
    for i, (stem, x) in enumerate(_input_images(cfg, nets)):
        row = []
        for name, c in zip(names, classes):
            for s in range(cfg.run.n_samples):
                img = translate_one(nets, x, sample_noise(cfg.train.seed, i, s, nets.cfg.z_dim), c)
                path = out / f"{i:03d}_{stem}__{name}__s{s}.png"
                row.append(_save_png(img, path))
                written.append(path)
        rows.append(row)
    grid = Path(cfg.run.out) / "grid.png"
    Image.fromarray(_tile(rows)).save(grid)
    return written + [grid]


def interpolation_embeddings(nets: Networks, a: int, b: int, steps: int) -> list[torch.Tensor]:
    if steps < 2:
        raise ConfigError("interpolation needs steps >= 2")
    with torch.no_grad():
        ea = nets.generator.class_embedding(torch.tensor([a]))
        eb = nets.generator.class_embedding(torch.tensor([b]))
    ts = np.linspace(0.0, 1.0, steps)
    return [(1.0 - float(t)) * ea + float(t) * eb for t in ts]


def cmd_interpolate(cfg: RunConfig) -> Path:
    """Strip over the linearly interpolated class embedding for one input and one noise draw."""
    nets = load_model(cfg)
    vocab = load_checkpoint(cfg.run.checkpoint).vocab
    a, b = _class_index(vocab, cfg.run.class_a), _class_index(vocab, cfg.run.class_b)
    embeddings = interpolation_embeddings(nets, a, b, cfg.run.steps)
    _, x = _input_images(cfg, nets)[0]
    z = sample_noise(cfg.train.seed, 0, 0, nets.cfg.z_dim)
    out = Path(cfg.run.out)
    frames = [_save_png(translate_one(nets, x, z, embedding=e), out / "interpolation" / f"step_{k:03d}.png")
              for k, e in enumerate(embeddings)]
    strip = out / "interpolation.png"
    Image.fromarray(_tile([frames])).save(strip)
    return strip


def cmd_evaluate(cfg: RunConfig) -> MetricReport:
    out = Path(cfg.run.out)
    if cfg.run.identity:
        ds = make_dataset(cfg.data, cfg.arch.resolution)
        generate = identity_generator(ds)
    else:
        nets = load_model(cfg)
        ds = make_dataset(cfg.data, nets.cfg.resolution)
        generate = translator(nets, ds, cfg.eval.seed)
    report = evaluate_translation(generate, ds, cfg.eval.n_gen_per_class, _extractor(cfg.eval),
                                  _classifier_cfg(cfg.eval))
    report.notes["generator"] = "identity control" if cfg.run.identity else cfg.run.checkpoint
    write_report(report, out)
    return report


# -- ablation -------------------------------------------------------------------------

@dataclass
class Variant:
    sweep: str
    name: str
    cfg: RunConfig

    @property
    def key(self) -> str:
        return f"{self.sweep}__{self.name}".replace(",", "+").replace("/", "_")


def _with(cfg: RunConfig, **sections) -> RunConfig:
    return replace(cfg, **{k: replace(getattr(cfg, k), **v) for k, v in sections.items()})


def adaptor_variants(cfg: RunConfig) -> list[Variant]:
    out = [Variant("adaptor", f"w-{lv}", _with(cfg, arch={"adaptor_levels": (lv,), "adaptor_mode": "learned"}))
           for lv in cfg.arch.levels]
    out.append(Variant("adaptor", "no-adaptor", _with(cfg, arch={"adaptor_levels": None, "adaptor_mode": "direct"})))
    out.append(Variant("adaptor", "full", _with(cfg, arch={"adaptor_levels": None, "adaptor_mode": "learned"})))
    return out


def transfer_variants(cfg: RunConfig) -> list[Variant]:
    return [Variant("transfer", TransferFlags.parse(row).label(),
                    _with(cfg, run={"transfer_flags": row, "scratch": row == "none"})) for row in TRANSFER_ROWS]


def depth_variants(cfg: RunConfig) -> list[Variant]:
    out = []
    for nb in cfg.ablate.depth_blocks:
        bottleneck = cfg.arch.resolution >> nb
        if bottleneck < 1:
            continue
        arch = {"bottleneck_resolution": bottleneck, "num_levels": min(cfg.arch.num_levels, nb),
                "adaptor_levels": None}
        out.append(Variant("depth", f"down-{nb}", _with(cfg, arch=arch)))
    return out


def lambda_rec_variants(cfg: RunConfig) -> list[Variant]:
    return [Variant("lambda_rec", f"lambda_rec-{float(v):g}", _with(cfg, loss={"lambda_rec": float(v)}))
            for v in cfg.ablate.lambda_recs.split(",") if v.strip()]


def data_fraction_variants(cfg: RunConfig) -> list[Variant]:
    return [Variant("data_fraction", f"fraction-{float(v):g}", _with(cfg, data={"fraction": float(v)}))
            for v in cfg.ablate.data_fractions.split(",") if v.strip()]


VARIANT_BUILDERS = {"adaptor": adaptor_variants, "transfer": transfer_variants, "depth": depth_variants,
                    "lambda_rec": lambda_rec_variants, "data_fraction": data_fraction_variants}


def enumerate_variants(cfg: RunConfig) -> list[Variant]:
    sweeps = [s.strip() for s in cfg.ablate.sweeps.split(",") if s.strip()]
    unknown = [s for s in sweeps if s not in VARIANT_BUILDERS]
    if unknown:
        raise ConfigError(f"unknown sweep dimension(s) {unknown}; valid: {list(SWEEPS)}")
    variants = [Variant("baseline", "baseline", cfg)]
    for s in sweeps:
        variants.extend(VARIANT_BUILDERS[s](cfg))
    return variants


SUMMARY_FIELDS = ("sweep", "variant", "transfer", "adaptor_levels", "adaptor_mode", "bottleneck",
                  "lambda_rec", "data_fraction", "iterations", "RC", "FC", "mKIDx100", "mFID")


def _fits_pretrained(cfg: RunConfig) -> bool:
    if cfg.run.scratch or not cfg.run.checkpoint:
        return False
    return load_checkpoint(cfg.run.checkpoint).arch.transfer_signature() == cfg.arch.transfer_signature()


def _fmt(v) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def cmd_ablate(cfg: RunConfig) -> list[dict]:
    """Run every variant of the requested sweeps; write a summary table and mFID curves."""
    out = Path(cfg.run.out)
    variants = enumerate_variants(cfg)
    full = make_dataset(cfg.data, cfg.arch.resolution)
    clf_cfg = _classifier_cfg(cfg.eval)
    real_clf = train_classifier(*full.split("train"), full.num_classes, clf_cfg) if clf_cfg else None
    rows, curves = [], {}
    for v in variants:
        vcfg = v.cfg
        if not vcfg.run.scratch and vcfg.run.checkpoint and not _fits_pretrained(vcfg):
            log.warning("variant %s: architecture differs from the pretrained model; training from scratch", v.key)
            vcfg = _with(vcfg, run={"scratch": True})
        vcfg = _with(vcfg, run={"out": str(out / "variants" / v.key)}, eval={"final_report": True})
        echo_config(vcfg, f"ablate variant {v.key}")
        data = subsample(full, vcfg.data.fraction, vcfg.data.fraction_seed)
        result, report = _train_variant(vcfg, full, data, Path(vcfg.run.out), real_clf)
        row = {"sweep": v.sweep, "variant": v.name, "transfer": report.notes["transfer"],
               "adaptor_levels": ",".join(map(str, vcfg.arch.active_adaptor_levels)),
               "adaptor_mode": vcfg.arch.adaptor_mode, "bottleneck": vcfg.arch.bottleneck,
               "lambda_rec": vcfg.loss.lambda_rec, "data_fraction": vcfg.data.fraction,
               "iterations": result.state.iteration, **report.summary()}
        rows.append(row)
        curves.setdefault(v.sweep, []).append((v.name, result.snapshots, report.mfid, result.state.iteration))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row[k]) for k in SUMMARY_FIELDS})
    _write_text(out / "summary.csv", buf.getvalue())
    _write_text(out / "summary.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    plot_curves(curves, out)
    return rows


def plot_curves(curves: dict, out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for sweep, series in curves.items():
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, snaps, final, iters in series:
            its = [s["iteration"] for s in snaps]
            vals = [s["mFID"] for s in snaps]
            if not its or its[-1] != iters:
                its, vals = its + [iters], vals + [final]
            ax.plot(its, vals, marker="o", label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel("mFID")
        ax.set_title(sweep)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out / f"curves_{sweep}.png"
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths


# -- argument parsing -----------------------------------------------------------------

COMMANDS = {"pretrain": cmd_pretrain, "train": cmd_train, "translate": cmd_translate,
            "interpolate": cmd_interpolate, "evaluate": cmd_evaluate, "ablate": cmd_ablate}


def _levels(text: str) -> str:
    return "none" if text in ("all", "none", "") else text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [arch] [train] [loss] [data] [eval] [run] [ablate]")
    common.add_argument("--seed", type=int, help="training / sampling seed (train.seed)")
    common.add_argument("--out", help="output directory (run.out)")
    common.add_argument("--checkpoint", help="pretrained GAN (train, ablate) or trained model (translate, ...)")
    common.add_argument("--dataset", help="folder-per-class image root, or 'toy'")
    common.add_argument("--scratch", action="store_true", default=None, help="train without transfer")
    common.add_argument("--transfer-flags", dest="transfer_flags", help="subset of enc,gen,dis (or none)")
    common.add_argument("--adaptor-levels", dest="adaptor_levels", type=_levels,
                        help="comma list of active adaptor levels, or 'all'")
    common.add_argument("--lambda-rec", dest="lambda_rec", type=float, help="reconstruction loss weight")
    common.add_argument("--data-fraction", dest="data_fraction", type=float,
                        help="fraction of training images kept per class")
    common.add_argument("--n-gen-per-class", dest="n_gen_per_class", type=int,
                        help="generated images per class for mFID/mKID")
    common.add_argument("--materialize", help="write the synthetic dataset to this folder-per-class root")
    common.add_argument("--iterations", type=int, help="total training iterations (train.total_iterations)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="deepi2i", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter, epilog=keys_help())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=(COMMANDS[name].__doc__ or "").split("\n")[0],
                           formatter_class=argparse.RawDescriptionHelpFormatter, epilog=keys_help())
        if name == "evaluate":
            p.add_argument("--identity", action="store_true", default=None,
                           help="score real test images in place of translations (control)")
        if name in ("translate", "interpolate"):
            p.add_argument("--inputs", help="comma-separated image files or directories")
        if name == "translate":
            p.add_argument("--classes", help="comma-separated class names, or 'all'")
            p.add_argument("--n-samples", dest="n_samples", type=int)
        if name == "interpolate":
            p.add_argument("--class-a", dest="class_a")
            p.add_argument("--class-b", dest="class_b")
            p.add_argument("--steps", type=int)
        if name == "ablate":
            p.add_argument("--sweep", help=f"comma list of sweep dimensions: {','.join(SWEEPS)}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        echo_config(cfg, args.command)
        COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
