"""Desk-scale transfer-vs-scratch experiment behind the directional acceptance checks.

Pretrains a conditional GAN on the 16-class synthetic source, then trains the
8-class target translator with and without transfer for several seeds at full
and reduced data. Run directly to populate an output directory:

    python3 tests/desk_experiment.py --out runs/desk
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from deepi2i.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = (0, 1, 2)
FRACTIONS = (1.0, 0.1)


def _snapshots(run_dir: Path) -> dict[int, float]:
    lines = (run_dir / "metrics.jsonl").read_text().splitlines()
    return {int(s["iteration"]): float(s["mFID"]) for s in map(json.loads, lines)}


def run_name(mode: str, fraction: float, seed: int) -> str:
    return f"{mode}_f{fraction:g}_s{seed}"


def run(out, seeds=SEEDS, fractions=FRACTIONS, log=print) -> dict:
    out = Path(out)
    pre = out / "pretrain" / "final.zip"
    if not pre.exists():
        log("pretraining source GAN")
        if main(["pretrain", "--config", str(CONFIGS / "desk_source.ini"), "--out", str(pre.parent)]) != 0:
            raise RuntimeError("pretraining failed")
    curves = {}
    for fraction in fractions:
        for seed in seeds:
            for mode in ("transfer", "scratch"):
                name = run_name(mode, fraction, seed)
                run_dir = out / name
                if not (run_dir / "final.zip").exists():
                    log(f"training {name}")
                    argv = ["train", "--config", str(CONFIGS / "desk_target.ini"), "--out", str(run_dir),
                            "--seed", str(seed), "--data-fraction", str(fraction),
                            "--set", f"data.fraction_seed={seed}"]
                    argv += ["--checkpoint", str(pre)] if mode == "transfer" else ["--scratch"]
                    if main(argv) != 0:
                        raise RuntimeError(f"training {name} failed")
                curves[name] = _snapshots(run_dir)
    summary = {"curves": curves, "seeds": list(seeds), "fractions": list(fractions)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def transfer_benefit(summary: dict, checkpoints=(500, 1000), final=2000) -> dict:
    """Per-seed comparisons used by the directional acceptance checks."""
    curves, out = summary["curves"], {"early": [], "final": [], "relative_gap": {}}
    for seed in summary["seeds"]:
        tr, sc = curves[run_name("transfer", 1.0, seed)], curves[run_name("scratch", 1.0, seed)]
        out["early"].append(all(tr[i] < sc[i] for i in checkpoints))
        out["final"].append((tr[final], sc[final]))
        for fraction in summary["fractions"]:
            t = curves[run_name("transfer", fraction, seed)][final]
            s = curves[run_name("scratch", fraction, seed)][final]
            out["relative_gap"].setdefault(fraction, []).append((s - t) / s)
    return out


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--out", required=True)
    args = p.parse_args()
    res = run(args.out)
    print(json.dumps(transfer_benefit(res), indent=2))
