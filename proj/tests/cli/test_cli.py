import csv
import json
import os
import re
import subprocess
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

CLI = os.environ.get("SLICEFUSION_CLI", str(Path(__file__).resolve().parents[2] / "build" / "slicefusion"))


def run(*args, check=None):
    r = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check is not None:
        assert r.returncode == check, r.stdout + r.stderr
    return r


def write_cfg(path, **keys):
    path.write_text("".join(f"{k} = {v}\n" for k, v in keys.items()))
    return path


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("gen-data", "--seed", 3, "--n", 12, "--out", root / "data", check=0)
    cfg = write_cfg(root / "pre.cfg", stage="pretrain", epochs=1, max_steps=2, data_dir="data", output_dir="pre")
    run("train", "--config", cfg, check=0)
    ft = write_cfg(
        root / "ft.cfg", stage="finetune", epochs=1, max_steps=2, data_dir="data", checkpoint="pre/model.ckpt",
        output_dir="ft",
    )
    run("train", "--config", ft, check=0)
    return root


def test_gen_data_counts_and_determinism(tmp_path):
    r = run("gen-data", "--seed", 9, "--n", 5, "--out", tmp_path / "a", check=0)
    counts = [int(m) for m in re.findall(r"^\s+\w+: (\d+)$", r.stdout, re.M)]
    assert sum(counts) == 5
    lines = (tmp_path / "a" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 5
    for line in lines:
        rec = json.loads(line)
        assert (tmp_path / "a" / rec["volume_path"]).is_file()
    run("gen-data", "--seed", 9, "--n", 5, "--out", tmp_path / "b", check=0)
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_gen_data_rejects_zero_samples(tmp_path):
    run("gen-data", "--seed", 1, "--n", 0, "--out", tmp_path, check=1)


def test_missing_config_is_a_usage_error(tmp_path):
    run("train", "--config", tmp_path / "nope.cfg", check=1)


def test_bad_config_line_is_reported(tmp_path):
    cfg = write_cfg(tmp_path / "bad.cfg", epochs=1, bogus=3)
    r = run("train", "--config", cfg, check=1)
    assert "line 2" in r.stderr


def test_training_writes_checkpoint_and_loss(work):
    for stage in ("pre", "ft"):
        assert (work / stage / "model.ckpt").is_file()
        assert (work / stage / "vocab.txt").is_file()
        rows = list(csv.reader((work / stage / "loss.csv").open()))
        assert len(rows) >= 2


def test_eval_report(work):
    cfg = write_cfg(work / "ev.cfg", data_dir="data", checkpoint="ft/model.ckpt", output_dir="ev")
    run("eval", "--config", cfg, check=0)
    report = json.loads((work / "ev" / "eval.json").read_text())
    records = report if isinstance(report, list) else report["records"]
    assert records
    for rec in records:
        assert 0.0 <= rec["value"] <= 100.0


def test_eval_vocab_mismatch_is_a_runtime_error(work, tmp_path):
    ckpt_dir = tmp_path / "ck"
    ckpt_dir.mkdir()
    (ckpt_dir / "model.ckpt").write_bytes((work / "ft" / "model.ckpt").read_bytes())
    words = (work / "ft" / "vocab.txt").read_text().splitlines()
    (ckpt_dir / "vocab.txt").write_text("\n".join(words + ["extra"]) + "\n")
    cfg = write_cfg(tmp_path / "ev.cfg", data_dir=work / "data", output_dir=tmp_path / "ev")
    r = run("eval", "--config", cfg, "--checkpoint", ckpt_dir / "model.ckpt", check=2)
    assert "vocabulary" in r.stderr


def read_scores(path):
    rows = list(csv.reader(path.open()))
    return [float(r[-1]) for r in rows[1:]]


def test_score_exports_csv_and_svg(work):
    volume = work / "data" / "volumes" / "000000.mvol"
    cfg = write_cfg(work / "sc.cfg", checkpoint="ft/model.ckpt")
    run("score", "--config", cfg, "--volume", volume, "--instruction", "which band holds the bright lesion",
        "--out", work / "s1", check=0)
    run("score", "--config", cfg, "--volume", volume, "--instruction", "what texture is on the patterned slice",
        "--out", work / "s2", check=0)
    s1 = read_scores(work / "s1" / "scores.csv")
    assert len(s1) == 32
    assert abs(sum(s1) - 1.0) < 1e-6
    ET.parse(work / "s1" / "scores.svg")
    assert (work / "s1" / "scores.csv").read_text() != (work / "s2" / "scores.csv").read_text()


def test_gradcheck_reports_pass():
    r = run("gradcheck", "--seed", 0, check=0)
    err = float(re.search(r"max_rel_error (\S+)", r.stdout).group(1))
    assert err <= 1e-4
    assert re.search(r"^entries \d+ tolerance \S+ PASS$", r.stdout, re.M)
