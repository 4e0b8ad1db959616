"""Command-line behavior: subcommands, exit codes, files produced.

Everything drives main(argv) in-process so coverage tools and monkeypatching
work; one subprocess test confirms the installed module entry point.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

import mgn.tensor as tensor_mod
from mgn.cli import main
from mgn.config import parse_config
from mgn.fileio import read_ppm, save_checkpoint, write_ppm
from mgn.model import build_model, param_count
from mgn.train import synth_dataset

TINY_DOC = {
    "base_channels": 3,
    "partitions": 2,
    "batch_size": 1,
    "crop": 16,
    "total_steps": 1,
    "val_interval": 1,
    "dataset": {"train_pairs": 1, "val_pairs": 1, "image_size": 16},
}


def _write_cfg(tmp_path, name="cfg.json", **overrides):
    doc = json.loads(json.dumps(TINY_DOC))
    for k, v in overrides.items():
        if isinstance(v, dict):
            doc.setdefault(k, {}).update(v)
        else:
            doc[k] = v
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p, doc


def _identity_ckpt(tmp_path, name="id.ckpt", **overrides):
    """Checkpoint whose model copies its input through unchanged."""
    doc = json.loads(json.dumps(TINY_DOC))
    doc["residual_mode"] = "plain"
    for k, v in overrides.items():
        doc[k] = v
    model_cfg, _, _ = parse_config(doc)
    model = build_model(model_cfg, 0)
    model.residual_head.weight.data[:] = 0.0
    model.residual_head.bias.data[:] = 0.0
    path = tmp_path / name
    save_checkpoint(path, doc, model.state())
    return path


def _sample_image(tmp_path, name, size=16, seed=0):
    img = synth_dataset(1, size, seed)[1][0]  # a well-lit target scene
    path = tmp_path / name
    write_ppm(path, np.transpose(img, (1, 2, 0)))
    return path


# ------------------------------------------------------------------ train


def test_train_writes_artifacts(tmp_path, capsys):
    cfg, _ = _write_cfg(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "final.ckpt").exists()
    assert (out / "best.ckpt").exists()
    assert (out / "log.csv").exists()
    assert "best val PSNR" in capsys.readouterr().out


def test_train_records_fusion_mode_in_log(tmp_path):
    cfg, _ = _write_cfg(tmp_path, fusion_mode="l2g")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "log.csv").read_text().splitlines()[0]
    assert header.startswith("# config: ")
    assert json.loads(header[len("# config: "):])["fusion_mode"] == "l2g"


def test_train_seed_override_changes_run(tmp_path):
    cfg, _ = _write_cfg(tmp_path)
    a, b, c = (tmp_path / n for n in ("a", "b", "c"))
    assert main(["train", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(b)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(c), "--seed", "5"]) == 0
    assert (a / "log.csv").read_bytes() == (b / "log.csv").read_bytes()
    assert (a / "log.csv").read_bytes() != (c / "log.csv").read_bytes()


def test_train_unwritable_out_is_usage_error(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    cfg, _ = _write_cfg(tmp_path)
    code = main(["train", "--config", str(cfg), "--out", str(blocker / "sub")])
    assert code == 2
    assert "not writable" in capsys.readouterr().err


def test_train_rejects_unknown_config_key(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"partitons": 4}))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_train_rejects_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_train_missing_config_file(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["train", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert "cannot read config" in capsys.readouterr().err


# ---------------------------------------------------------------- enhance


def test_enhance_identity_checkpoint_reproduces_bytes(tmp_path):
    ckpt = _identity_ckpt(tmp_path)
    src = _sample_image(tmp_path, "img.ppm")
    out = tmp_path / "out"
    assert main(["enhance", "--ckpt", str(ckpt), "--in", str(src), "--out", str(out)]) == 0
    assert (out / "img.ppm").read_bytes() == src.read_bytes()


def test_enhance_pads_and_crops_odd_sizes(tmp_path):
    ckpt = _identity_ckpt(tmp_path)
    rng = np.random.default_rng(1)
    src = tmp_path / "odd.ppm"
    write_ppm(src, rng.uniform(0.1, 0.9, (65, 65, 3)))
    out = tmp_path / "out"
    assert main(["enhance", "--ckpt", str(ckpt), "--in", str(src), "--out", str(out)]) == 0
    enhanced = read_ppm(out / "odd.ppm")
    assert enhanced.shape == (65, 65, 3)
    assert (out / "odd.ppm").read_bytes() == src.read_bytes()


def test_enhance_is_deterministic(tmp_path):
    cfg, doc = _write_cfg(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    src = _sample_image(tmp_path, "img.ppm", seed=2)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    for out in (out1, out2):
        code = main(["enhance", "--ckpt", str(run / "final.ckpt"),
                     "--in", str(src), "--out", str(out)])
        assert code == 0
    assert (out1 / "img.ppm").read_bytes() == (out2 / "img.ppm").read_bytes()


def test_enhance_continues_past_bad_files(tmp_path, capsys):
    ckpt = _identity_ckpt(tmp_path)
    good = _sample_image(tmp_path, "good.ppm")
    tiny = tmp_path / "tiny.ppm"
    write_ppm(tiny, np.full((4, 4, 3), 0.5))
    missing = tmp_path / "gone.ppm"
    out = tmp_path / "out"
    code = main(["enhance", "--ckpt", str(ckpt), "--in", str(tiny), str(missing),
                 str(good), "--out", str(out)])
    assert code == 1
    err = capsys.readouterr().err
    assert ">= 8" in err
    assert (out / "good.ppm").exists()
    assert not (out / "tiny.ppm").exists()


def test_enhance_bad_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    src = _sample_image(tmp_path, "img.ppm")
    code = main(["enhance", "--ckpt", str(bad), "--in", str(src),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "cannot load checkpoint" in capsys.readouterr().err


# ------------------------------------------------------------------- eval


def _pairs_tree(tmp_path, names, mismatched=()):
    pairs = tmp_path / "pairs"
    (pairs / "x").mkdir(parents=True)
    (pairs / "gt").mkdir()
    for i, name in enumerate(names):
        img = synth_dataset(1, 16, i)[1][0]
        hw3 = np.transpose(img, (1, 2, 0))
        write_ppm(pairs / "x" / name, hw3)
        write_ppm(pairs / "gt" / name, hw3)
    for name in mismatched:
        write_ppm(pairs / "x" / name, np.full((16, 16, 3), 0.5))
    return pairs


def test_eval_perfect_pairs_hit_the_caps(tmp_path, capsys):
    ckpt = _identity_ckpt(tmp_path)
    pairs = _pairs_tree(tmp_path, ["a.ppm", "b.ppm", "c.ppm"])
    csv = tmp_path / "report.csv"
    assert main(["eval", "--ckpt", str(ckpt), "--pairs", str(pairs), "--csv", str(csv)]) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "image_id,psnr,ssim"
    assert len(lines) == 1 + 3 + 1
    for row in lines[1:4]:
        name, p, s = row.split(",")
        assert float(p) == 100.0
        assert abs(float(s) - 1.0) < 1e-9
    mean = lines[4].split(",")
    assert mean[0] == "mean"
    assert float(mean[1]) == 100.0
    assert "mean PSNR 100.00" in capsys.readouterr().out


def test_eval_mean_matches_rows(tmp_path):
    cfg, _ = _write_cfg(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    pairs = _pairs_tree(tmp_path, ["a.ppm", "b.ppm"])
    csv = tmp_path / "r.csv"
    assert main(["eval", "--ckpt", str(run / "final.ckpt"), "--pairs", str(pairs),
                 "--csv", str(csv)]) == 0
    lines = csv.read_text().splitlines()
    rows = [ln.split(",") for ln in lines[1:-1]]
    mean = lines[-1].split(",")
    assert abs(float(mean[1]) - np.mean([float(r[1]) for r in rows])) < 1e-9
    assert abs(float(mean[2]) - np.mean([float(r[2]) for r in rows])) < 1e-9


def test_eval_lists_unmatched_and_fails(tmp_path, capsys):
    ckpt = _identity_ckpt(tmp_path)
    pairs = _pairs_tree(tmp_path, ["a.ppm"], mismatched=["stray.ppm"])
    csv = tmp_path / "r.csv"
    code = main(["eval", "--ckpt", str(ckpt), "--pairs", str(pairs), "--csv", str(csv)])
    assert code == 1
    assert "stray.ppm only in x/" in capsys.readouterr().err
    # the matched pair is still evaluated
    assert len(csv.read_text().splitlines()) == 1 + 1 + 1


def test_eval_requires_pair_directories(tmp_path, capsys):
    ckpt = _identity_ckpt(tmp_path)
    code = main(["eval", "--ckpt", str(ckpt), "--pairs", str(tmp_path / "nope"),
                 "--csv", str(tmp_path / "r.csv")])
    assert code == 1
    assert "x/ and gt/" in capsys.readouterr().err


# ----------------------------------------------------------------- ablate


def test_ablate_partition_suite_rows(tmp_path):
    cfg, _ = _write_cfg(tmp_path)
    out = tmp_path / "ab"
    assert main(["ablate", "--suite", "partition", "--config", str(cfg),
                 "--out", str(out)]) == 0
    lines = (out / "partition.csv").read_text().splitlines()
    assert lines[0] == "variant,partitions,params,best_val_psnr,final_val_psnr,final_val_ssim"
    ks = [ln.split(",")[0] for ln in lines[1:]]
    assert ks == ["1", "2", "4", "8", "12", "16"]
    params = [int(ln.split(",")[2]) for ln in lines[1:]]
    assert params == sorted(params)
    assert len(set(params)) == 6  # the weight head grows with the partition count


def test_ablate_fusion_suite_parameterization(tmp_path):
    cfg, doc = _write_cfg(tmp_path)
    out = tmp_path / "ab"
    assert main(["ablate", "--suite", "fusion", "--config", str(cfg),
                 "--out", str(out)]) == 0
    lines = (out / "fusion.csv").read_text().splitlines()
    modes = [ln.split(",")[0] for ln in lines[1:]]
    assert modes == ["concat", "l2g", "g2l", "mutual"]
    by_mode = {ln.split(",")[0]: int(ln.split(",")[1]) for ln in lines[1:]}
    assert by_mode["concat"] != by_mode["mutual"]
    assert by_mode["l2g"] == by_mode["g2l"] == by_mode["mutual"]
    # cross-check the recorded counts against freshly built models
    for mode in ("concat", "mutual"):
        model_cfg, _, _ = parse_config(dict(doc, fusion_mode=mode))
        assert by_mode[mode] == param_count(build_model(model_cfg, 0))


def test_ablate_blocks_suite_layout_and_cache(tmp_path):
    cfg, _ = _write_cfg(tmp_path)
    out = tmp_path / "ab"
    assert main(["ablate", "--suite", "blocks", "--config", str(cfg),
                 "--out", str(out)]) == 0
    lines = (out / "blocks.csv").read_text().splitlines()
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 11
    assert rows[0][0] == "Model-O" and rows[0][1] == "00000"
    assert rows[10][0] == "Model-I" and rows[10][1] == "11111"
    repeated = [r for r in rows if r[0] == "Model-A"]
    assert len(repeated) == 2
    assert repeated[0] == repeated[1]  # cached, not retrained
    run_dirs = sorted(p.name for p in (out / "blocks").iterdir())
    assert len(run_dirs) == 10
    # masked-off exchanges shrink the model
    by_label = {r[0]: int(r[2]) for r in rows}
    assert by_label["Model-O"] < by_label["Model-A"] < by_label["Model-I"]


def test_ablate_loss_suite_combos(tmp_path):
    cfg, _ = _write_cfg(tmp_path)
    out = tmp_path / "ab"
    assert main(["ablate", "--suite", "loss", "--config", str(cfg),
                 "--out", str(out)]) == 0
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0].startswith("variant,alpha_g,alpha_l,")
    rows = [ln.split(",") for ln in lines[1:]]
    assert [r[0] for r in rows] == ["L_f", "L_f+L_g", "L_f+L_l", "L_f+L_g+L_l"]
    assert [(float(r[1]), float(r[2])) for r in rows] == [
        (0.0, 0.0), (0.01, 0.0), (0.0, 0.05), (0.01, 0.05)]


def test_ablate_unknown_suite_is_usage_error(tmp_path, capsys):
    code = main(["ablate", "--suite", "bogus", "--out", str(tmp_path / "o")])
    assert code == 2
    capsys.readouterr()


# -------------------------------------------------------------- gradcheck


def test_gradcheck_passes_and_lists_each_layer_once(tmp_path, capsys):
    cfg, doc = _write_cfg(tmp_path)
    assert main(["gradcheck", "--config", str(cfg)]) == 0
    out_lines = capsys.readouterr().out.splitlines()
    layer_lines = [ln for ln in out_lines if ln.endswith(("ok", "FAIL"))]
    printed = [ln.split()[0] for ln in layer_lines]
    model_cfg, _, _ = parse_config(doc)
    params = [n for n, _ in build_model(model_cfg, 0).named_parameters()]
    expected = []
    for name in params:
        layer = name.rsplit(".", 1)[0] if "." in name else name
        if layer not in expected:
            expected.append(layer)
    assert printed == expected
    assert all(ln.endswith("ok") for ln in layer_lines)
    assert "max relative error" in out_lines[-1]


def test_gradcheck_corrupted_backward_fails_loudly(tmp_path, capsys, monkeypatch):
    cfg, _ = _write_cfg(tmp_path)
    monkeypatch.setattr(tensor_mod, "_d_tanh", lambda y: np.ones_like(y))
    code = main(["gradcheck", "--config", str(cfg)])
    assert code == 1
    captured = capsys.readouterr()
    assert "gradient check failed" in captured.err
    assert "global_blocks.0.fc" in captured.err  # tanh lives in the global blocks
    assert "FAIL" in captured.out


# ------------------------------------------------------------------ shell


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "train" in capsys.readouterr().out


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "mgn", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "enhance" in proc.stdout
