"""End-to-end CLI behavior: artifacts, exit codes, bitwise reruns."""

import json
from pathlib import Path

import pytest

from crossmodal.cli import main

WORLD = {
    "seed": 7,
    "concepts": 3,
    "triples": 30,
    "test_size": 6,
    "output_dim": 64,  # must match the desk spec's softmax width
    "image_noise": 0.05,
    "sound_noise": 0.05,
}

TRAIN = {
    "seed": 3,
    "scale": 1 / 16,
    "learning_rate": 0.001,
    "batch_size": 2,
    "iterations": 4,
    "loss": {"margin": 0.5, "kl_weight": 1.0, "ranking_weight": 1.0},
}

EVAL = {
    "seed": 5,
    "layer": "shared2",
    "n_splits": 1,
    "split_size": 6,
    "probe_k": 2,
    "probe_units": 4,
    "svm_iterations": 50,
}


def _write(path: Path, doc) -> str:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def _tree_bytes(root: Path, skip=("run_manifest.json",)):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name not in skip
    }


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One gen-data + train run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    world_cfg = _write(root / "world.json", WORLD)
    data_dir = root / "data"
    assert main(["gen-data", "--config", world_cfg, "--out", str(data_dir)]) == 0

    train_cfg = _write(root / "train.json", TRAIN)
    run_dir = root / "run"
    assert main(["train", "--config", train_cfg, "--data",
                 str(data_dir / "manifest.csv"), "--out", str(run_dir)]) == 0
    return root, data_dir, run_dir


def test_gen_data_counts(pipeline):
    _, data_dir, _ = pipeline
    sample_files = list((data_dir / "samples").iterdir())
    assert len(sample_files) == 90  # 30 triples x 3 modalities
    manifest_rows = (data_dir / "manifest.csv").read_text().strip().splitlines()
    assert len(manifest_rows) == 1 + 90
    for name in ("labels.csv", "teacher.csv", "embeddings.embt", "stopwords.txt",
                 "run_manifest.json"):
        assert (data_dir / name).exists()
    # balanced concept labels: 30 triples over 3 concepts, 10 images each
    from crossmodal.formats import load_labels_csv
    labels = load_labels_csv(data_dir / "labels.csv")
    counts = {}
    for sid, label in labels.items():
        if sid.startswith("img-"):
            counts[label] = counts.get(label, 0) + 1
    assert counts == {0: 10, 1: 10, 2: 10}


def test_gen_data_rerun_byte_identical(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    again = tmp_path / "data2"
    assert main(["gen-data", "--config", str(root / "world.json"),
                 "--out", str(again)]) == 0
    a = _tree_bytes(data_dir)
    b = _tree_bytes(again)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == b[k], k


def test_run_manifest_lists_artifacts(pipeline):
    _, data_dir, run_dir = pipeline
    doc = json.loads((data_dir / "run_manifest.json").read_text())
    assert doc["command"] == "gen-data"
    assert "manifest.csv" in doc["artifacts"]
    assert doc["seed"] == WORLD["seed"]
    run_doc = json.loads((run_dir / "run_manifest.json").read_text())
    assert "train_loss.csv" in run_doc["artifacts"]
    assert any(a.startswith("checkpoint/final") for a in run_doc["artifacts"])


def test_train_loss_csv_row_count(pipeline):
    _, _, run_dir = pipeline
    lines = (run_dir / "train_loss.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + TRAIN["iterations"]


def test_train_rerun_reproduces_checkpoint_bitwise(pipeline, tmp_path):
    root, data_dir, run_dir = pipeline
    again = tmp_path / "run2"
    assert main(["train", "--config", str(root / "train.json"), "--data",
                 str(data_dir / "manifest.csv"), "--out", str(again)]) == 0
    a = _tree_bytes(run_dir)
    b = _tree_bytes(again)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == b[k], k


def test_eval_all_tasks_write_reports(pipeline, tmp_path):
    root, data_dir, run_dir = pipeline
    eval_cfg = _write(root / "eval.json", EVAL)
    out = tmp_path / "eval"
    code = main(["eval", "--config", eval_cfg, "--data", str(data_dir / "manifest.csv"),
                 "--checkpoint", str(run_dir / "checkpoint" / "final"),
                 "--out", str(out)])
    assert code == 0
    for name in ("retrieval_ranks.csv", "bridge_ranks.csv", "accuracies.csv",
                 "baseline_ranks.csv", "probe.csv", "summary.json"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["retrieval"]) == {"image->sound", "sound->image",
                                         "image->text", "text->image"}
    assert set(summary["zero_shot"]) == {f"{a}->{b}" for a in ("image", "sound", "text")
                                         for b in ("image", "sound", "text")}
    probe_lines = (out / "probe.csv").read_text().strip().splitlines()
    # header + units x modalities x k rows
    assert len(probe_lines) == 1 + EVAL["probe_units"] * 3 * EVAL["probe_k"]


def test_eval_rerun_byte_identical(pipeline, tmp_path):
    root, data_dir, run_dir = pipeline
    eval_cfg = _write(root / "eval2.json", EVAL)
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        assert main(["eval", "--config", eval_cfg, "--data",
                     str(data_dir / "manifest.csv"),
                     "--checkpoint", str(run_dir / "checkpoint" / "final"),
                     "--out", str(out)]) == 0
        outs.append(_tree_bytes(out))
    assert outs[0].keys() == outs[1].keys()
    for k in outs[0]:
        assert outs[0][k] == outs[1][k], k


def test_unknown_task_exits_2_listing_tasks(pipeline, tmp_path, capsys):
    root, data_dir, run_dir = pipeline
    eval_cfg = _write(root / "eval3.json", EVAL)
    code = main(["eval", "--config", eval_cfg, "--data", str(data_dir / "manifest.csv"),
                 "--checkpoint", str(run_dir / "checkpoint" / "final"),
                 "--out", str(tmp_path / "x"), "--tasks", "retrieval,nonsense"])
    assert code == 2
    err = capsys.readouterr().err
    assert "nonsense" in err and "retrieval, bridge, zero-shot, baseline, probe" in err


def test_config_without_seed_exits_2(tmp_path):
    cfg = tmp_path / "world.json"
    cfg.write_text(json.dumps({"concepts": 2, "triples": 4}))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2


def test_corrupt_data_exits_3(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    # copy the dataset and corrupt one spectrogram's magic
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(data_dir, broken)
    spec_file = next((broken / "samples").glob("*.spec"))
    spec_file.write_bytes(b"XXXX" + spec_file.read_bytes()[4:])
    code = main(["train", "--config", str(root / "train.json"), "--data",
                 str(broken / "manifest.csv"), "--out", str(tmp_path / "r")])
    assert code == 3


def test_numeric_abort_exits_4(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    cfg = dict(TRAIN)
    cfg["learning_rate"] = 1e80
    cfg["iterations"] = 5
    train_cfg = _write(tmp_path / "explode.json", cfg)
    code = main(["train", "--config", train_cfg, "--data",
                 str(data_dir / "manifest.csv"), "--out", str(tmp_path / "r")])
    assert code == 4


def test_unknown_config_field_exits_2(pipeline, tmp_path):
    root, data_dir, _ = pipeline
    cfg = dict(TRAIN)
    cfg["learnig_rate"] = 1.0  # typo should be caught, not ignored
    train_cfg = _write(tmp_path / "typo.json", cfg)
    code = main(["train", "--config", train_cfg, "--data",
                 str(data_dir / "manifest.csv"), "--out", str(tmp_path / "r")])
    assert code == 2
