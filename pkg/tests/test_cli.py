import csv
import json

import numpy as np
import pytest
import torch
from PIL import Image

from deepi2i.cli import (RunConfig, SUMMARY_FIELDS, build_parser, enumerate_variants, interpolation_embeddings,
                         keys_help, load_model, main, resolve_config, sample_noise, translate_one, _with)
from deepi2i.config import ConfigError
from deepi2i.data import load_dataset, to_uint8
from deepi2i.models import head_names
from deepi2i.transfer import load_checkpoint

TINY_INI = """
[arch]
resolution = 32
base_width = 4
num_classes = 4
z_dim = 20
embed_dim = 8
num_levels = 4
bottleneck_resolution = 2

[train]
total_iterations = 2
batch_size = 8
ema_decay = 0.0
log_every = 1

[data]
toy_classes = 4
toy_per_class = 20

[eval]
n_gen_per_class = 4
classifier_width = 4
classifier_iterations = 2
"""


@pytest.fixture(scope="module")
def tiny_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI)
    return path


@pytest.fixture(scope="module")
def model(tiny_ini, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert main(["train", "--config", str(tiny_ini), "--out", str(out), "--scratch"]) == 0
    return out / "final.zip"


def _resolve(*argv):
    return resolve_config(build_parser().parse_args(list(argv)))


def _png(path):
    return np.asarray(Image.open(path))


# -- configuration --------------------------------------------------------------------

def test_config_round_trip(tiny_ini):
    cfg = _resolve("train", "--config", str(tiny_ini), "--lambda-rec", "0.5", "--adaptor-levels", "3,5")
    again = RunConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert cfg.loss.lambda_rec == 0.5 and cfg.arch.adaptor_levels == (3, 5)
    assert RunConfig.from_ini(RunConfig().to_ini()) == RunConfig()


def test_override_precedence(tiny_ini):
    assert _resolve("train", "--config", str(tiny_ini)).train.total_iterations == 2
    assert _resolve("train", "--config", str(tiny_ini), "--iterations", "7").train.total_iterations == 7
    cfg = _resolve("train", "--config", str(tiny_ini), "--iterations", "7", "--set", "train.total_iterations=9")
    assert cfg.train.total_iterations == 9
    assert _resolve("train", "--adaptor-levels", "all").arch.adaptor_levels is None


def test_unknown_keys_and_sections_rejected(tiny_ini, tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        _resolve("train", "--set", "train.bogus=1")
    with pytest.raises(ConfigError):
        _resolve("train", "--set", "nodot=1")
    bad = tmp_path / "bad.ini"
    bad.write_text("[weird]\nx = 1\n")
    with pytest.raises(ConfigError, match="weird"):
        _resolve("train", "--config", str(bad))
    assert main(["train", "--out", str(tmp_path / "o"), "--set", "train.bogus=1"]) == 2


def test_every_key_is_documented_in_help():
    text = keys_help()
    for section, values in (("train", "total_iterations"), ("arch", "adaptor_levels"), ("eval", "extractor"),
                            ("data", "materialize"), ("ablate", "sweeps"), ("loss", "lambda_rec")):
        assert f"{section}.{values} = " in text
    assert "train.total_iterations" in build_parser().format_help()


def test_config_echo_is_written_before_work(tmp_path):
    out = tmp_path / "echo"
    assert main(["translate", "--out", str(out)]) == 2            # no checkpoint
    text = (out / "config.ini").read_text()
    assert text.startswith("# deepi2i translate")
    assert RunConfig.from_ini(text).run.out == str(out)


# -- pretrain / train errors ----------------------------------------------------------

def test_pretrain_zero_iterations_gives_twin_compatible_init(tiny_ini, model, tmp_path):
    out = tmp_path / "pre"
    assert main(["pretrain", "--config", str(tiny_ini), "--out", str(out), "--iterations", "0"]) == 0
    ckpt = load_checkpoint(out / "final.zip")
    assert set(ckpt.networks) == {"generator", "discriminator"} and ckpt.iteration == 0
    d = set(ckpt.networks["discriminator"].arrays)
    assert d - head_names(d) == set(load_checkpoint(model).networks["encoder"].arrays)


def test_missing_pretrained_checkpoint_is_an_error(tiny_ini, tmp_path):
    assert main(["train", "--config", str(tiny_ini), "--out", str(tmp_path / "a"),
                 "--checkpoint", str(tmp_path / "nope.zip")]) == 2
    assert main(["train", "--config", str(tiny_ini), "--out", str(tmp_path / "b")]) == 2


def test_train_writes_report_with_table_columns(model):
    report = json.loads((model.parent / "report.json").read_text())
    assert set(report["summary"]) == {"RC", "FC", "mKIDx100", "mFID"}
    assert report["notes"]["transfer"] == "scratch"
    rows = list(csv.reader((model.parent / "report.csv").open()))
    assert [r[0] for r in rows[-3:]] == ["mean", "RC", "FC"]


# -- translate ------------------------------------------------------------------------

def test_translate_counts_and_grid_integrity(tiny_ini, model, tmp_path):
    out = tmp_path / "tr"
    assert main(["translate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(out),
                 "--set", "run.n_inputs=1", "--n-samples", "2"]) == 0
    files = sorted((out / "translations").glob("*.png"))
    assert len(files) == 8
    names = load_checkpoint(model).vocab.names
    grid = _png(out / "grid.png")
    assert grid.shape == (32, 4 * 2 * 32, 3)
    col = 0
    for name in names:
        for s in range(2):
            cell = _png(out / "translations" / f"000_test000__{name}__s{s}.png")
            assert np.array_equal(grid[:, col * 32:(col + 1) * 32], cell)
            col += 1
    # distinct noise per sample
    assert not np.array_equal(_png(files[0]), _png(files[1]))
    again = tmp_path / "tr2"
    assert main(["translate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(again),
                 "--set", "run.n_inputs=1", "--n-samples", "2"]) == 0
    for f in files:
        assert f.read_bytes() == (again / "translations" / f.name).read_bytes()


def test_translate_arbitrary_inputs_and_class_subset(tiny_ini, model, tmp_path):
    src = tmp_path / "inputs"
    src.mkdir()
    Image.fromarray(np.full((50, 40, 3), 90, dtype=np.uint8)).save(src / "flat.png")
    names = load_checkpoint(model).vocab.names
    out = tmp_path / "sub"
    assert main(["translate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(out),
                 "--inputs", str(src), "--classes", f"{names[1]},{names[3]}", "--n-samples", "1"]) == 0
    assert sorted(p.name for p in (out / "translations").iterdir()) == \
        sorted(f"000_flat__{n}__s0.png" for n in (names[1], names[3]))
    assert _png(out / "grid.png").shape == (32, 64, 3)


def test_translate_unknown_class_lists_vocabulary(tiny_ini, model, tmp_path, capsys):
    assert main(["translate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(tmp_path),
                 "--classes", "unicorn"]) == 2
    err = capsys.readouterr().err
    assert "unicorn" in err and load_checkpoint(model).vocab.names[0] in err


# -- interpolate ----------------------------------------------------------------------

def test_interpolation_endpoints_match_direct_translation(tiny_ini, model, tmp_path):
    names = load_checkpoint(model).vocab.names
    a, b = names[0], names[2]
    out = tmp_path / "interp"
    assert main(["interpolate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(out),
                 "--class-a", a, "--class-b", b, "--steps", "5"]) == 0
    frames = sorted((out / "interpolation").glob("step_*.png"))
    assert len(frames) == 5 and _png(out / "interpolation.png").shape == (32, 5 * 32, 3)
    cfg = _resolve("interpolate", "--config", str(tiny_ini), "--checkpoint", str(model))
    nets = load_model(cfg)
    x = torch.from_numpy(_first_test_image(cfg))
    z = sample_noise(cfg.train.seed, 0, 0, nets.cfg.z_dim)
    emb = interpolation_embeddings(nets, 0, 2, 5)
    for e, c in ((emb[0], 0), (emb[-1], 2)):
        assert torch.equal(translate_one(nets, x, z, embedding=e), translate_one(nets, x, z, c))
    assert np.array_equal(_png(frames[0]), to_uint8(translate_one(nets, x, z, 0)))
    mid = interpolation_embeddings(nets, 0, 2, 3)[1]
    rows = nets.generator.class_embedding(torch.tensor([0, 2])).detach()
    assert torch.allclose(mid, rows.mean(0, keepdim=True), atol=1e-7)
    # translate and interpolate share (input 0, sample 0) noise
    tr = tmp_path / "tr"
    assert main(["translate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(tr),
                 "--set", "run.n_inputs=1", "--n-samples", "1", "--classes", f"{a},{b}"]) == 0
    assert np.array_equal(_png(frames[0]), _png(tr / "translations" / f"000_test000__{a}__s0.png"))
    assert np.array_equal(_png(frames[-1]), _png(tr / "translations" / f"000_test000__{b}__s0.png"))


def _first_test_image(cfg):
    from deepi2i.cli import make_dataset
    return make_dataset(cfg.data, cfg.arch.resolution).split("test")[0][0]


def test_interpolation_errors(tiny_ini, model, tmp_path):
    names = load_checkpoint(model).vocab.names
    base = ["interpolate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(tmp_path)]
    assert main(base + ["--class-a", names[0], "--class-b", names[1], "--steps", "1"]) == 2
    assert main(base + ["--class-a", names[0], "--class-b", "nope"]) == 2


# -- evaluate -------------------------------------------------------------------------

def test_evaluate_identity_control_and_byte_identical_reports(tiny_ini, tmp_path):
    for name in ("a", "b"):
        assert main(["evaluate", "--config", str(tiny_ini), "--out", str(tmp_path / name), "--identity",
                     "--n-gen-per-class", "2"]) == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert max(report["per_class_fid"].values()) <= 1e-3
    assert report["summary"]["RC"] == report["notes"]["real_test_accuracy"]
    for f in ("report.json", "report.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_evaluate_model(tiny_ini, model, tmp_path):
    assert main(["evaluate", "--config", str(tiny_ini), "--checkpoint", str(model), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["mfid"] > 0


# -- ablate ---------------------------------------------------------------------------

def test_variant_inventories(tiny_ini):
    cfg = _resolve("ablate", "--config", str(tiny_ini), "--sweep", "adaptor,transfer")
    names = [(v.sweep, v.name) for v in enumerate_variants(cfg)]
    assert names == [("baseline", "baseline"),
                     ("adaptor", "w-3"), ("adaptor", "w-4"), ("adaptor", "w-5"), ("adaptor", "w-6"),
                     ("adaptor", "no-adaptor"), ("adaptor", "full"),
                     ("transfer", "none"), ("transfer", "gen"), ("transfer", "dis"), ("transfer", "gen,dis"),
                     ("transfer", "enc,gen,dis")]
    keys = [v.key for v in enumerate_variants(cfg)]
    assert len(set(keys)) == len(keys)
    by_name = {v.name: v.cfg for v in enumerate_variants(cfg)}
    assert list(by_name["w-4"].arch.active_adaptor_levels) == [4]
    assert by_name["no-adaptor"].arch.adaptor_mode == "direct"
    assert by_name["none"].run.scratch and not by_name["gen"].run.scratch


def test_other_sweeps_and_unknown_sweep(tiny_ini):
    cfg = _resolve("ablate", "--config", str(tiny_ini), "--sweep", "depth,lambda_rec,data_fraction")
    names = [v.name for v in enumerate_variants(cfg)]
    assert names == ["baseline", "down-2", "down-3", "down-4", "down-5",
                     "lambda_rec-0", "lambda_rec-1", "fraction-0.1", "fraction-1"]
    depth = {v.name: v.cfg.arch for v in enumerate_variants(cfg) if v.sweep == "depth"}
    assert depth["down-3"].bottleneck_resolution == 4 and depth["down-3"].num_levels == 3
    with pytest.raises(ConfigError, match="colour"):
        enumerate_variants(_with(cfg, ablate={"sweeps": "colour"}))
    assert [v.name for v in enumerate_variants(_with(cfg, ablate={"sweeps": ""}))] == ["baseline"]


def test_empty_sweep_runs_baseline_only(tiny_ini, tmp_path):
    assert main(["ablate", "--config", str(tiny_ini), "--out", str(tmp_path), "--scratch"]) == 0
    rows = list(csv.DictReader((tmp_path / "summary.csv").open()))
    assert len(rows) == 1 and rows[0]["variant"] == "baseline"
    assert tuple(rows[0]) == SUMMARY_FIELDS
    assert (tmp_path / "curves_baseline.png").exists()
    assert (tmp_path / "variants" / "baseline__baseline" / "report.json").exists()


def test_materialize_writes_loadable_folder(tiny_ini, tmp_path):
    root = tmp_path / "folder"
    assert main(["evaluate", "--config", str(tiny_ini), "--out", str(tmp_path / "o"), "--identity",
                 "--n-gen-per-class", "2", "--materialize", str(root), "--set", "eval.rc_fc=false"]) == 0
    ds = load_dataset(root, 32)
    assert len(ds.labels) == 80 and ds.num_classes == 4
