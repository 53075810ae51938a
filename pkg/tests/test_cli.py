import json

import pytest

from lesionnet.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """phantom -> folds -> train (2 folds, 1 epoch) through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    common = ["--set", "seed=1", "--set", "phantom_images=16", "--set", "phantom_size=48",
              "--set", "phantom_radius_min=3", "--set", "phantom_radius_max=6"]
    assert main(["phantom", "--out", str(root / "data"), *common]) == 0
    manifest = root / "data" / "manifest.csv"
    assert main(["folds", "--manifest", str(manifest), "--k", "2", "--out", str(root / "folds.json")]) == 0
    train_args = ["--manifest", str(manifest), "--folds", str(root / "folds.json"), "--epochs", "1",
                  "--set", "batch_size=4", "--set", "init_source=random", "--set", "normalization=unit",
                  "--set", "target_width=48", "--set", "resize_above=1000000", "--set", "width_divisor=8"]
    assert main(["train", "--out", str(root / "al"), *train_args]) == 0
    assert main(["train", "--out", str(root / "ao"), "--variant", "a-only", *train_args]) == 0
    return root


def test_train_outputs(pipeline):
    for d in ("al", "ao"):
        assert (pipeline / d / "fold0.ckpt").is_file() and (pipeline / d / "fold1.ckpt").is_file()
        assert (pipeline / d / "config.txt").is_file()
    lines = (pipeline / "al" / "train_fold0.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["epoch"] == 1


def test_eval_and_plot(pipeline, capsys):
    ck = [str(pipeline / "al" / f"fold{i}.ckpt") for i in range(2)]
    code, out, _ = run(capsys, "eval", "--checkpoint", *ck, "--manifest", str(pipeline / "data" / "manifest.csv"),
                       "--folds", str(pipeline / "folds.json"), "--out", str(pipeline / "ev"))
    assert code == 0
    summary = json.loads(out)["summary"]
    assert summary[0]["task"] == "diagnosis"
    curve = pipeline / "ev" / "curves" / "diagnosis_merged.csv"
    code, out, _ = run(capsys, "plot-roc", f"A+L={curve}", "--out", str(pipeline / "roc.png"))
    assert code == 0 and (pipeline / "roc.png").is_file()


def test_aonly_lesion_eval_fails(pipeline, capsys):
    ck = [str(pipeline / "ao" / f"fold{i}.ckpt") for i in range(2)]
    code, _, err = run(capsys, "eval", "--checkpoint", *ck, "--manifest", str(pipeline / "data" / "manifest.csv"),
                       "--folds", str(pipeline / "folds.json"), "--task", "lesions", "--out", str(pipeline / "ev_ao"))
    assert code != 0
    assert "no lesion outputs" in json.loads(err.strip().splitlines()[-1])["message"]


def test_export_maps(pipeline, capsys):
    img = sorted((pipeline / "data" / "images").iterdir())[0]
    out = pipeline / "maps"
    code, stdout, _ = run(capsys, "export-maps", "--checkpoint", str(pipeline / "al" / "fold0.ckpt"), "--out", str(out),
                          str(img))
    assert code == 0
    n = len(json.loads(stdout)["channels"])
    assert len(list(out.iterdir())) == n + 2
    code, _, err = run(capsys, "export-maps", "--checkpoint", str(pipeline / "ao" / "fold0.ckpt"),
                       "--out", str(pipeline / "maps_ao"), str(img))
    assert code != 0 and "no lesion outputs" in err


def test_refuses_overwrite_without_force(capsys, tmp_path):
    args = ["phantom", "--out", str(tmp_path / "d"), "--set", "phantom_images=8", "--set", "phantom_size=48"]
    assert run(capsys, *args)[0] == 0
    code, _, err = run(capsys, *args)
    assert code != 0 and "--force" in err
    assert run(capsys, *args, "--force")[0] == 0


def test_unknown_config_key_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "phantom", "--out", str(tmp_path / "x"), "--set", "bogus=1")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["key"] == "bogus"


def test_config_listing(capsys):
    code, out, _ = run(capsys, "config")
    assert code == 0 and "learning_rate = 1e-05" in out
