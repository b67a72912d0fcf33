import json
from pathlib import Path

import numpy as np
import pytest

from rodfind.cli import dispatch


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny end-to-end workspace: corpus, checkpoint, index."""
    root = tmp_path_factory.mktemp("ws")
    data = root / "data"
    code = dispatch(["gen-dataset", "--out", str(data), "--bases", "2",
                     "--per-base", "6", "--seed", "3", "--val-fraction", "0.25"])
    assert code == 0
    ckpt = root / "model.ckpt"
    log = root / "train.csv"
    code = dispatch(["train", "--manifest", str(data / "manifest.csv"),
                     "--out", str(ckpt), "--log", str(log),
                     "--epochs", "2", "--batch-size", "3", "--lr", "1e-4",
                     "--seed", "1"])
    assert code == 0
    index = root / "gallery.idx"
    code = dispatch(["index", "--checkpoint", str(ckpt),
                     "--manifest", str(data / "manifest.csv"),
                     "--out", str(index), "--split", "all"])
    assert code == 0
    return root, data, ckpt, index


def test_no_arguments_prints_usage_and_exits_1(capsys):
    assert dispatch([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_is_usage_error(capsys):
    assert dispatch(["gen-dataset", "--bogus"]) == 1


def test_unknown_command_is_usage_error():
    assert dispatch(["frobnicate"]) == 1


def test_missing_file_is_runtime_error(capsys, tmp_path):
    code = dispatch(["voxelize", "--stl", str(tmp_path / "missing.stl"),
                     "--out", str(tmp_path / "o.nrrd")])
    assert code == 2
    assert "missing.stl" in capsys.readouterr().err


def test_gen_dataset_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert dispatch(["gen-dataset", "--out", str(tmp_path / name),
                         "--bases", "2", "--per-base", "5", "--seed", "7"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()
    for grid in sorted((a / "grids").iterdir()):
        assert grid.read_bytes() == (b / "grids" / grid.name).read_bytes()


def test_gen_dataset_writes_valid_manifest(workspace):
    _, data, _, _ = workspace
    from rodfind import dataset as ds

    manifest = ds.read_manifest(data / "manifest.csv")
    assert len(manifest.rows) == 12
    assert manifest.meta["resolution"] == 16
    splits = {row.split for row in manifest.rows}
    assert splits == {"train", "val"}


def test_voxelize_command(tmp_path):
    from rodfind import dataset as ds
    from rodfind import geometry as geo

    stl = tmp_path / "cube.stl"
    stl.write_bytes(geo.write_stl(geo.cuboid_mesh((0, 0, 0), (8, 8, 8)), "binary"))
    out = tmp_path / "cube.nrrd"
    assert dispatch(["voxelize", "--stl", str(stl), "--out", str(out),
                     "--resolution", "8"]) == 0
    grid = ds.read_nrrd(out.read_bytes())
    assert grid.occupied_count == 8 ** 3


def test_train_writes_log_and_checkpoint(workspace):
    root, _, ckpt, _ = workspace
    lines = (root / "train.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_recall1,wall_seconds"
    assert len(lines) == 3
    assert ckpt.exists() and ckpt.stat().st_size > 1000


def test_query_returns_k_rows(workspace, capsys):
    root, data, ckpt, index = workspace
    from rodfind import dataset as ds

    manifest = ds.read_manifest(data / "manifest.csv")
    text = manifest.rows[0].text
    code = dispatch(["query", "--index", str(index), "--checkpoint", str(ckpt),
                     "--text", text, "--k", "8"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split("\t") == ["rank", "id", "distance"]
    assert len(lines) == 9
    distances = [float(line.split("\t")[2]) for line in lines[1:]]
    assert distances == sorted(distances)


def test_query_json_and_previews(workspace, capsys, tmp_path):
    root, data, ckpt, index = workspace
    from rodfind import dataset as ds

    text = ds.read_manifest(data / "manifest.csv").rows[0].text
    previews = tmp_path / "previews"
    code = dispatch(["query", "--index", str(index), "--checkpoint", str(ckpt),
                     "--text", text, "--k", "3", "--json",
                     "--previews", str(previews)])
    assert code == 0
    out = capsys.readouterr().out
    payload = json.loads(out[:out.index("previews under")].strip()
                         if "previews under" in out else out)
    assert len(payload["matches"]) == 3
    assert len(list(previews.glob("*.obj"))) == 3


def test_eval_prints_recall(workspace, capsys):
    root, data, ckpt, _ = workspace
    code = dispatch(["eval", "--checkpoint", str(ckpt),
                     "--manifest", str(data / "manifest.csv"),
                     "--split", "val", "--k", "1,8", "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload["recall"]) == {"1", "8"}
    assert 0.0 <= payload["recall"]["1"] <= payload["recall"]["8"] <= 1.0


def test_tune_runs_a_tiny_design(workspace, capsys, tmp_path):
    root, data, _, _ = workspace
    design = tmp_path / "design.json"
    design.write_text(json.dumps({
        "kind": "full_factorial",
        "factors": [{"name": "learning rate", "levels": [1e-4, 1e-3]},
                    {"name": "epochs", "levels": [1, 2]}],
    }))
    report = tmp_path / "report.csv"
    code = dispatch(["tune", "--manifest", str(data / "manifest.csv"),
                     "--design", str(design), "--out", str(report),
                     "--seed", "5"])
    assert code == 0
    text = report.read_text()
    assert "# range analysis" in text and "# anova" in text
    assert "best combination" in capsys.readouterr().out


def test_config_file_supplies_defaults(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"bases": 1, "per_base": 4, "seed": 9,
                                  "out": str(tmp_path / "data")}))
    assert dispatch(["--config", str(config), "gen-dataset"]) == 0
    from rodfind import dataset as ds

    manifest = ds.read_manifest(tmp_path / "data" / "manifest.csv")
    assert len(manifest.rows) == 4
