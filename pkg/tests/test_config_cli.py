import json

import numpy as np
import pytest
import yaml
from PIL import Image

from helpers import tiny_config, write_config
from longvideo.cli import main, parse_size
from longvideo.config import (ConfigError, ExperimentConfig, apply_overrides, desk_config, dump_config, from_dict,
                              load_config, resolve_data_path)
from longvideo.data import ClipStore, SyntheticSceneSpec, generate_synthetic


def _png_stack(d):
    return np.stack([np.asarray(Image.open(p)) for p in sorted(d.glob("*.png"))])


def test_config_round_trip(tmp_path):
    for cfg in (ExperimentConfig(), desk_config()):
        dump_config(cfg, tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml") == cfg


def test_paper_defaults():
    cfg = ExperimentConfig()
    assert (cfg.filterbank.n_filters, cfg.filterbank.k_min, cfg.filterbank.k_max) == (128, 500, 10000)
    assert cfg.train.batch == 64 and cfg.train.frames == 128 and cfg.train.ema_beta == 0.99985
    assert cfg.train_superres.batch == 32 and cfg.superres.dropout_p == 0.9


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        from_dict({"train": {"lr": 0.1}})
    with pytest.raises(ConfigError):
        load_config(None, ["train.batch=0"])
    (tmp_path / "c.yaml").write_text("train:\n  nope: 3\n")
    assert main(["train-lowres", "--config", str(tmp_path / "c.yaml")]) == 2


def test_overrides():
    d = apply_overrides({"train": {"batch": 4}}, ["train.steps=7", "seed=3", "augment.color=false"])
    assert d == {"train": {"batch": 4, "steps": 7}, "seed": 3, "augment": {"color": False}}
    cfg = load_config(None, ["train.frames=16", "synthesis.output_size=[64, 64]"])
    assert cfg.train.frames == 16 and tuple(cfg.synthesis.output_size) == (64, 64)
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_data_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("LONGVIDEO_DATA_ROOT", str(tmp_path))
    assert resolve_data_path("data/x") == tmp_path / "data/x"
    assert resolve_data_path("/abs/x") == type(tmp_path)("/abs/x")


def test_parse_size():
    assert parse_size("256x144") == (144, 256)


def test_init_config(tmp_path):
    assert main(["init-config", "--preset", "paper", "--out", str(tmp_path / "p.yaml")]) == 0
    assert load_config(tmp_path / "p.yaml") == ExperimentConfig()


def test_missing_dataset_exit_2(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "nowhere")
    path = write_config(tmp_path / "c.yaml", cfg)
    assert main(["train-lowres", "--config", path, "--out", str(tmp_path / "run")]) == 2
    assert str(tmp_path / "nowhere") in capsys.readouterr().err
    assert main(["train-superres", "--config", path]) == 2
    assert main(["train-lowres", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["evaluate", "--mode", "fvd16", "--real", str(tmp_path / "nowhere"), "--gen", "bilinear",
                 "--out", str(tmp_path / "e")]) == 2


def test_bad_arguments_exit_2(tmp_path):
    assert main(["no-such-command"]) == 2
    assert main(["evaluate", "--mode", "nope", "--out", str(tmp_path)]) == 2


def test_synth_data_command(tmp_path):
    out = tmp_path / "syn"
    code = main(["synth-data", "--out", str(out), "--clips", "2", "--frames", "6", "--high-res", "32x32",
                 "--low-res", "8x8", "--seed", "5"])
    assert code == 0
    store = ClipStore.open(out, validate=True)
    assert len(store.clips) == 2 and store.low == (8, 8)
    assert json.loads((out / "synthetic.json").read_text())["spec"]["seed"] == 5


def test_ingest_command(tmp_path):
    src = tmp_path / "src" / "a"
    src.mkdir(parents=True)
    for i in range(5):
        Image.new("RGB", (64, 36), (i * 20, 0, 0)).save(src / f"{i:03d}.png")
    args = ["ingest", "--source-dir", str(tmp_path / "src"), "--out", str(tmp_path / "out"), "--aspect", "16:9",
            "--low-res", "16x9", "--high-res", "64x36"]
    assert main(args + ["--min-frames", "5"]) == 0
    assert ClipStore.open(tmp_path / "out").high == (36, 64)
    assert main(args[:4] + [str(tmp_path / "o2")] + args[5:] + ["--min-frames", "6"]) == 1
    assert main(["ingest", "--source-dir", str(tmp_path / "none"), "--out", str(tmp_path / "o3")]) == 2


@pytest.fixture(scope="module")
def long_store(tmp_path_factory):
    root = tmp_path_factory.mktemp("long")
    return generate_synthetic(SyntheticSceneSpec(seed=9), 2, 128, root, (64, 64), (16, 16))


@pytest.mark.parametrize("T", [16, 32, 128])
def test_sequence_length_ablation(T, long_store, tmp_path):
    cfg = tiny_config(long_store.root, frames=T, steps=1)
    path = write_config(tmp_path / "c.yaml", cfg)
    assert main(["train-lowres", "--config", path, "--out", str(tmp_path / "run")]) == 0
    m = yaml.safe_load((tmp_path / "run" / "config.yaml").read_text())
    assert m["train"]["frames"] == T and m["discriminator"]["frames"] == T
    assert (tmp_path / "run" / "best.ckpt").exists()


@pytest.fixture(scope="module")
def trained(tiny_store, tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = write_config(d / "c.yaml", tiny_config(tiny_store.root))
    assert main(["train-lowres", "--config", path, "--out", str(d / "low")]) == 0
    assert main(["train-superres", "--config", path, "--out", str(d / "sr")]) == 0
    return d, path


def test_train_outputs(trained):
    d, _ = trained
    for run in ("low", "sr"):
        assert (d / run / "best.ckpt").exists() and (d / run / "config.yaml").exists()
        log = [json.loads(l) for l in (d / run / "metrics.jsonl").read_text().splitlines()]
        assert log[-1]["step"] == 2 and "fvd16" in log[-1]
    assert load_config(d / "low" / "config.yaml") == load_config(d / "c.yaml")


def test_resume_command(trained, tmp_path):
    d, path = trained
    assert main(["train-lowres", "--config", path, "--out", str(tmp_path / "r"), "--steps", "3",
                 "--resume", str(d / "low" / "last.ckpt")]) == 0
    log = [json.loads(l) for l in (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log if "loss_d" in r] == [3]


def test_generate_determinism_and_offset(trained, tmp_path):
    d, _ = trained
    ck = str(d / "low" / "best.ckpt")
    for name, seed, offset in (("a", 7, 0), ("b", 7, 0), ("c", 7, 32), ("d", 8, 0)):
        assert main(["generate", "--lowres-ckpt", ck, "--frames", "64", "--seed", str(seed), "--offset", str(offset),
                     "--out", str(tmp_path / name)]) == 0
    a, b, c, e = (_png_stack(tmp_path / n / "low") for n in "abcd")
    assert a.shape == (64, 16, 16, 3) and not (tmp_path / "a" / "high").exists()
    assert np.array_equal(a, b)
    assert np.array_equal(c[:32], a[32:])
    assert not np.array_equal(a, e)


def test_generate_errors(trained, tmp_path):
    d, _ = trained
    ck = str(d / "low" / "best.ckpt")
    assert main(["generate", "--lowres-ckpt", ck, "--frames", "48", "--out", str(tmp_path / "x")]) == 2
    assert main(["generate", "--lowres-ckpt", str(d / "nope.ckpt"), "--out", str(tmp_path / "x")]) == 2
    assert main(["generate", "--lowres-ckpt", str(d / "sr" / "best.ckpt"), "--out", str(tmp_path / "x")]) == 1
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a zip")
    assert main(["generate", "--lowres-ckpt", str(bad), "--out", str(tmp_path / "x")]) == 1


def test_generate_with_superres(trained, tmp_path):
    d, _ = trained
    assert main(["generate", "--lowres-ckpt", str(d / "low" / "best.ckpt"), "--sr-ckpt", str(d / "sr" / "best.ckpt"),
                 "--frames", "32", "--seed", "1", "--out", str(tmp_path / "g")]) == 0
    assert _png_stack(tmp_path / "g" / "high").shape == (32, 64, 64, 3)
    info = json.loads((tmp_path / "g" / "generate.json").read_text())
    assert info["high_size"] == [64, 64] and info["low_size"] == [16, 16]


def _evaluate(d, path, out, *extra):
    return main(["evaluate", "--config", path, "--out", str(out), *extra])


def test_evaluate_modes(trained, tiny_store, tmp_path):
    d, path = trained
    real = str(tiny_store.root)
    ck = str(d / "low" / "best.ckpt")
    assert _evaluate(d, path, tmp_path, "--mode", "fvd16", "--real", real, "--ckpt", ck) == 0
    assert json.loads((tmp_path / "fvd16.json").read_text())["value"] > 0
    assert _evaluate(d, path, tmp_path / "rr", "--mode", "fvd16", "--real", real, "--gen", real, "--segments", "8") == 0
    assert _evaluate(d, path, tmp_path, "--mode", "fidv", "--real", real, "--ckpt", ck, "--frames", "64") == 0
    assert json.loads((tmp_path / "fidv.json").read_text())["frames"] == 64
    assert _evaluate(d, path, tmp_path, "--mode", "colorsim", "--real", real, "--clips", "4", "--frames", "32") == 0
    rows = (tmp_path / "colorsim.csv").read_text().splitlines()
    assert rows[0] == "t,mean,std" and len(rows) == 33
    assert _evaluate(d, path, tmp_path, "--mode", "featcurve", "--real", real, "--frames", "16") == 0
    assert _evaluate(d, path, tmp_path / "sr", "--mode", "fvd16", "--real", real, "--gen", "real-conditioned-sr",
                     "--sr-ckpt", str(d / "sr" / "best.ckpt")) == 0
    assert json.loads((tmp_path / "sr" / "fvd16.json").read_text())["level"] == "high"
    assert _evaluate(d, path, tmp_path / "bl", "--mode", "fvd16", "--real", real, "--gen", "bilinear") == 0
    assert _evaluate(d, path, tmp_path / "bad", "--mode", "fvd16", "--real", real) == 2
    assert _evaluate(d, path, tmp_path / "bad", "--mode", "fvd128", "--real", real, "--gen", real) == 1


def test_evaluate_frames_directory(trained, tiny_store, tmp_path):
    d, path = trained
    assert main(["generate", "--lowres-ckpt", str(d / "low" / "best.ckpt"), "--frames", "32",
                 "--out", str(tmp_path / "g")]) == 0
    assert _evaluate(d, path, tmp_path, "--mode", "fvd16", "--real", str(tiny_store.root),
                     "--gen", str(tmp_path / "g" / "low"), "--segments", "8") == 0
