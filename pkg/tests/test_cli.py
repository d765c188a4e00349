import json
import os
import subprocess
import sys

import pytest
import yaml

from priorseg import cli

TINY_CFG = {
    "coarse": {"target_spacing": [4.0, 4.0, 8.0], "target_dims": [24, 24, 12],
               "epochs": 1, "lr": 1e-2, "batch": 1, "levels": 2,
               "base_width": 2},
    "refine": {"patch_dims": [16, 16, 8], "patches_per_organ": 2, "epochs": 1,
               "lr": 1e-2, "batch": 2, "levels": 2, "base_width": 2},
    "seed": 3,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Run the full CLI workflow once; individual tests inspect the outputs."""
    root = tmp_path_factory.mktemp("cliwork")
    cfg_path = root / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(TINY_CFG))
    data = root / "data"
    work = root / "work"

    def run(*argv):
        assert cli.main(list(argv)) == 0, f"command failed: {argv}"

    run("phantom", "--config", str(cfg_path), "--out", str(data),
        "--count", "4")
    run("cv-split", "--config", str(cfg_path), "--data", str(data),
        "--out", str(work))
    run("preprocess", "--config", str(cfg_path), "--data", str(data),
        "--out", str(work / "pre"))
    run("train-coarse", "--config", str(cfg_path), "--data", str(data),
        "--out", str(work), "--fold", "0")
    run("infer-coarse", "--config", str(cfg_path), "--data", str(data),
        "--ckpt", str(work / "coarse_fold0.ckpt"),
        "--out", str(work / "coarse_pred"))
    run("build-patches", "--config", str(cfg_path), "--data", str(data),
        "--coarse", str(work / "coarse_pred"), "--out", str(work / "patches"))
    run("train-refine", "--config", str(cfg_path),
        "--patches", str(work / "patches"), "--out", str(work), "--fold", "0")
    run("infer", "--config", str(cfg_path), "--data", str(data),
        "--coarse-ckpt", str(work / "coarse_fold0.ckpt"),
        "--refine-ckpt", str(work / "refine_fold0.ckpt"),
        "--out", str(work / "pred"))
    run("evaluate", "--pred", str(work / "pred"), "--gt", str(data),
        "--out", str(work / "eval"))
    return root


def test_phantom_writes_image_label_pairs(workspace):
    names = sorted(os.listdir(workspace / "data"))
    assert names == sorted([f"case{i:03d}_{kind}.nii.gz"
                            for i in range(4) for kind in ("image", "label")])


def test_cv_split_structure(workspace):
    folds = json.loads((workspace / "work" / "folds.json").read_text())
    assert [f["fold"] for f in folds] == [0, 1, 2, 3]
    for f in folds:
        assert len(f["train"]) == 3 and len(f["val"]) == 1


def test_preprocess_outputs(workspace):
    pre = workspace / "work" / "pre"
    for i in range(4):
        for suffix in ("norm", "coarse_image", "coarse_label"):
            assert (pre / f"case{i:03d}_{suffix}.nii.gz").exists()


def test_training_artifacts(workspace):
    work = workspace / "work"
    assert (work / "coarse_fold0.ckpt").exists()
    assert (work / "refine_fold0.ckpt").exists()
    hist = (work / "coarse_fold0_history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_loss,val_loss" and len(hist) == 2


def test_patch_dataset_files(workspace):
    patches = workspace / "work" / "patches"
    for name in ("manifest.jsonl", "patches.bin", "patches.index.json"):
        assert (patches / name).exists()


def test_predictions_and_report(workspace):
    pred = workspace / "work" / "pred"
    assert sorted(os.listdir(pred)) == [f"case{i:03d}_pred.nii.gz"
                                        for i in range(4)]
    report = json.loads((workspace / "work" / "eval" / "report.json").read_text())
    assert "overall" in report and "mean" in report
    tsv = (workspace / "work" / "eval" / "report.tsv").read_text()
    assert tsv.splitlines()[0].startswith("metric\t")


def test_error_is_machine_readable(capsys):
    rc = cli.main(["cv-split", "--data", "/nonexistent", "--out", "/tmp/x"])
    assert rc == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("ERROR ")
    payload = json.loads(err[len("ERROR "):])
    assert payload["type"] == "FileNotFoundError"


def test_subprocess_exit_codes(tmp_path):
    env = dict(os.environ)
    ok = subprocess.run([sys.executable, "-m", "priorseg.cli", "phantom",
                         "--out", str(tmp_path / "d"), "--count", "1"],
                        capture_output=True, text=True, env=env)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "priorseg.cli", "evaluate",
                          "--pred", "/nope", "--gt", "/nope",
                          "--out", str(tmp_path / "e")],
                         capture_output=True, text=True, env=env)
    assert bad.returncode == 1
    assert bad.stderr.strip().splitlines()[-1].startswith("ERROR ")
