"""End-to-end tests of the command-line surface and its run manifests."""

import json

import numpy as np
import pytest

from userboost import cli
from userboost.data import generate_mini_dataset, read_canonical_csv


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run(
        "synth-dataset", "--users", 3, "--gestures", 12,
        "--non-gestures", 6, "--seed", 7, "--out", data,
    ) == 0
    split = root / "split"
    assert run("split", "--data", data, "--seed", 5, "--out", split) == 0
    model = root / "model.ckpt"
    assert run(
        "train-ae", "--data", split, "--recon", "mse", "--max-epochs", 2,
        "--batch-size", 8, "--lr", "1e-3", "--seed", 3, "--out", model,
    ) == 0
    return {"root": root, "data": data, "split": split, "model": model}


# ---------------------------------------------------------------------------
# Dataset plumbing commands


def test_synth_dataset_writes_canonical_files(workspace):
    data = workspace["data"]
    dataset = read_canonical_csv(data / "gestures.csv")
    reference = generate_mini_dataset(3, 12, seed=7, non_gestures_per_user=6)
    assert dataset.windows == reference.gestures()
    non = read_canonical_csv(data / "non_gestures.csv")
    assert non.windows == reference.non_gestures()


def test_manifest_lists_every_output(workspace):
    data = workspace["data"]
    manifest = json.loads((data / "run-manifest.json").read_text())
    listed = {name.rsplit("/", 1)[-1] for name in manifest["outputs"]}
    on_disk = {p.name for p in data.iterdir()}
    assert listed == on_disk
    assert manifest["command"] == "synth-dataset"
    assert manifest["config_hash"].startswith("sha256:")
    assert manifest["seeds"] == {"root": 7}
    assert manifest["versions"]["userboost"]


def test_manifest_replay_reproduces_bytes(workspace, tmp_path):
    data = workspace["data"]
    out = tmp_path / "replayed"
    assert run(
        "synth-dataset", "--config", data / "run-manifest.json", "--out", out
    ) == 0
    for name in ("gestures.csv", "non_gestures.csv", "dataset.json"):
        assert (out / name).read_bytes() == (data / name).read_bytes()


def test_replaying_manifest_under_wrong_command_fails(workspace, tmp_path, capsys):
    code = run("split", "--config", workspace["data"] / "run-manifest.json",
               "--out", tmp_path / "x")
    assert code == 1
    assert "synth-dataset" in capsys.readouterr().err


def test_split_partitions_and_records_stats(workspace):
    split = workspace["split"]
    train = read_canonical_csv(split / "train.csv")
    validation = read_canonical_csv(split / "validation.csv")
    test = read_canonical_csv(split / "test.csv")
    # 12 gestures -> 8 pool + 4 test; 6 non-gestures -> 4 pool + 2 test.
    assert len(test.windows) == 3 * 6
    assert len(train.windows) + len(validation.windows) == 3 * 12
    assert all(w.label == "gesture" for w in validation.windows)
    manifest = json.loads((split / "dataset.json").read_text())
    assert len(manifest["channel_means"]) == 6
    assert manifest["split"]["parts"]["test"] == "test.csv"
    # Loading the split directory yields the training pool with the stats.
    pool = cli._load_dataset(str(split))
    assert len(pool.windows) == 3 * 12
    assert pool.channel_means is not None
    pool_gestures = np.stack([w.values for w in pool.windows if w.label == "gesture"])
    np.testing.assert_allclose(
        pool.channel_means, pool_gestures.reshape(-1, 6).mean(axis=0), atol=1e-12
    )


def test_ingest_and_preprocess_round_trip(tmp_path):
    import csv

    rng = np.random.default_rng(0)
    rows_path = tmp_path / "rows.csv"
    with open(rows_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "gesture_id", "timestamp", "sensor", "x", "y", "z"])
        for gid, contact in ((1, 10.0), (2, 20.0)):
            for t in np.arange(contact - 4.5, contact + 0.3, 0.02):
                for sensor in ("accel", "gyro"):
                    writer.writerow([3, gid, f"{t:.2f}", sensor, *rng.normal(size=3)])
    contacts_path = tmp_path / "contacts.csv"
    contacts_path.write_text("gesture_id,contact_time\n1,10.0\n2,20.0\n")
    terminals_path = tmp_path / "terminals.csv"
    terminals_path.write_text("gesture_id,terminal_id\n1,4\n2,5\n")

    out = tmp_path / "ingested"
    assert run(
        "ingest", "--rows", rows_path, "--contacts", contacts_path,
        "--terminals", terminals_path, "--out", out,
    ) == 0
    dataset = read_canonical_csv(out / "gestures.csv")
    assert [w.terminal_id for w in dataset.windows] == [4, 5]
    assert all(w.values.shape == (200, 6) for w in dataset.windows)

    filtered = tmp_path / "filtered"
    assert run(
        "preprocess", "--data", out, "--filter.cutoff-hz", 8, "--out", filtered
    ) == 0
    smooth = read_canonical_csv(filtered / "gestures.csv")
    raw_energy = sum(np.abs(np.diff(w.values, axis=0)).sum() for w in dataset.windows)
    smooth_energy = sum(np.abs(np.diff(w.values, axis=0)).sum() for w in smooth.windows)
    assert smooth_energy < raw_energy


# ---------------------------------------------------------------------------
# Model commands


def test_train_ae_emits_checkpoint_and_curves(workspace):
    model = workspace["model"]
    assert model.exists()
    curves = json.loads((model.parent / f"{model.name}.curves.json").read_text())
    assert curves  # at least one epoch row
    manifest = json.loads((model.parent / f"{model.name}.manifest.json").read_text())
    assert str(model) in manifest["outputs"]


def test_embed_writes_one_row_per_window(workspace, tmp_path):
    out = tmp_path / "embeddings.csv"
    assert run("embed", "--model", workspace["model"], "--data",
               workspace["data"], "--out", out) == 0
    lines = out.read_text().splitlines()
    header = lines[0].split(",")
    assert header[:4] == ["user_id", "terminal_id", "label", "order_index"]
    assert sum(c.startswith("mean_") for c in header) == 10
    assert sum(c.startswith("log_variance_") for c in header) == 10
    assert len(lines) - 1 == 3 * (12 + 6)

    scatter = tmp_path / "scatter.svg"
    assert run("plot", "--kind", "embedding", "--input", out,
               "--dims", "0,3", "--out", scatter) == 0
    assert scatter.read_text().lstrip().startswith("<?xml")


def test_generate_is_seeded_and_marked_synthetic(workspace, tmp_path):
    args = ("generate", "--model", workspace["model"], "--data", workspace["data"],
            "--user", 1, "--strategy", "self_mixed", "--count", 4)
    first = tmp_path / "a.csv"
    second = tmp_path / "b.csv"
    third = tmp_path / "c.csv"
    assert run(*args, "--seed", 11, "--out", first) == 0
    assert run(*args, "--seed", 11, "--out", second) == 0
    assert run(*args, "--seed", 12, "--out", third) == 0
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes() != third.read_bytes()
    lines = first.read_text().splitlines()
    assert lines[0].endswith(",synthetic")
    assert len(lines) - 1 == 4 * 200
    assert all(line.endswith(",1") for line in lines[1:])
    windows = read_canonical_csv(first)
    assert {w.user_id for w in windows.windows} == {1}


def test_train_auth_and_eval_artifacts(workspace, tmp_path):
    forest = tmp_path / "forest.bin"
    data = workspace["data"]
    assert run("train-auth", "--positives", data / "gestures.csv",
               "--negatives", data / "non_gestures.csv", "--seed", 2,
               "--out", forest) == 0
    assert forest.exists()
    assert json.loads((tmp_path / "forest.bin.summary.json").read_text())

    out = tmp_path / "evaluation"
    assert run("eval", "--model", forest, "--positives", data / "gestures.csv",
               "--negatives", data / "non_gestures.csv", "--svg", "true",
               "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["auroc"] <= 1.0
    assert (out / "rates.csv").read_text().startswith("threshold,far,frr")
    assert (out / "rates.svg").exists()

    again = tmp_path / "evaluation2"
    assert run("eval", "--model", forest, "--positives", data / "gestures.csv",
               "--negatives", data / "non_gestures.csv", "--out", again) == 0
    assert (again / "report.json").read_bytes() == (out / "report.json").read_bytes()
    assert (again / "rates.csv").read_bytes() == (out / "rates.csv").read_bytes()


# ---------------------------------------------------------------------------
# Experiment commands


def test_tstr_recognition_artifacts(workspace, tmp_path):
    out = tmp_path / "recognition"
    assert run("tstr-recognition", "--model", workspace["model"], "--data",
               workspace["data"], "--n-per-class", 8, "--seed", 6,
               "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["auroc"] <= 1.0
    assert (out / "rates.csv").exists()


def test_tstr_auth_baseline_users_and_aggregate(workspace, tmp_path):
    out = tmp_path / "auth"
    assert run("tstr-auth", "--data", workspace["data"], "--real-per-terminal", 1,
               "--synthetic", 0, "--seed", 8, "--out", out) == 0
    lines = (out / "users.csv").read_text().splitlines()
    assert lines[0] == "user_id,far_at_zero,eer_low,eer_high,auroc,negative_class_mode"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2"]
    assert all(line.endswith("reconstructions") for line in lines[1:])
    aggregate = json.loads((out / "aggregate.json").read_text())
    fars = [float(line.split(",")[1]) for line in lines[1:]]
    assert aggregate["far_at_zero"] == pytest.approx(np.mean(fars))
    assert aggregate["n_users"] == 3
    assert aggregate["synthetic_count"] == 0
    assert (out / "far_bars.svg").exists()

    parallel = tmp_path / "auth-jobs"
    assert run("tstr-auth", "--data", workspace["data"], "--real-per-terminal", 1,
               "--synthetic", 0, "--seed", 8, "--jobs", 2, "--out", parallel) == 0
    assert (parallel / "users.csv").read_bytes() == (out / "users.csv").read_bytes()

    bars = tmp_path / "bars.svg"
    assert run("plot", "--kind", "user-bars", "--input", out / "users.csv",
               "--out", bars) == 0
    assert bars.exists()


def test_burden_sweep_rows_and_replay(workspace, tmp_path):
    out = tmp_path / "sweep"
    args = ("burden-sweep", "--data", workspace["data"], "--grid", "1",
            "--synthetic", 3, "--seed", 9, "--train.recon", "mse",
            "--train.max-epochs", 2, "--train.batch-size", 8,
            "--train.lr", "1e-3")
    assert run(*args, "--out", out) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("1,0,3,")  # baseline arm first
    assert lines[2].startswith("1,3,3,")
    rows = json.loads((out / "sweep.json").read_text())
    assert [r["synthetic_count"] for r in rows] == [0, 3]
    assert (out / "burden.svg").exists()

    replayed = tmp_path / "sweep-replay"
    assert run("burden-sweep", "--config", out / "run-manifest.json",
               "--out", replayed) == 0
    assert (replayed / "sweep.csv").read_bytes() == (out / "sweep.csv").read_bytes()
    assert (replayed / "sweep.json").read_bytes() == (out / "sweep.json").read_bytes()

    curves = tmp_path / "curves.svg"
    assert run("plot", "--kind", "burden", "--input", out / "sweep.csv",
               "--out", curves) == 0
    assert curves.exists()


def test_plot_rates_from_report(workspace, tmp_path):
    data = workspace["data"]
    forest = tmp_path / "f.bin"
    assert run("train-auth", "--positives", data / "gestures.csv",
               "--negatives", data / "non_gestures.csv", "--out", forest) == 0
    out = tmp_path / "ev"
    assert run("eval", "--model", forest, "--positives", data / "gestures.csv",
               "--negatives", data / "non_gestures.csv", "--out", out) == 0
    svg = tmp_path / "rates.svg"
    assert run("plot", "--kind", "rates", "--input", out / "report.json",
               "--out", svg) == 0
    assert "<svg" in svg.read_text()


# ---------------------------------------------------------------------------
# Config resolution, overrides, and exit codes


def test_dry_run_prints_config_and_writes_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    assert run("synth-dataset", "--users", 2, "--gestures", 4, "--seed", 1,
               "--out", out, "--dry-run") == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["command"] == "synth-dataset"
    assert resolved["config"]["users"] == 2
    assert resolved["config_hash"].startswith("sha256:")
    assert not out.exists()


def test_flag_beats_env_beats_config(tmp_path, capsys, monkeypatch):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"users": 2, "gestures": 4, "seed": 1}))
    out = tmp_path / "never"

    assert run("synth-dataset", "--config", config, "--out", out, "--dry-run") == 0
    assert json.loads(capsys.readouterr().out)["config"]["seed"] == 1

    monkeypatch.setenv("USERBOOST_SEED", "5")
    assert run("synth-dataset", "--config", config, "--out", out, "--dry-run") == 0
    assert json.loads(capsys.readouterr().out)["config"]["seed"] == 5

    assert run("synth-dataset", "--config", config, "--seed", 3, "--out", out,
               "--dry-run") == 0
    assert json.loads(capsys.readouterr().out)["config"]["seed"] == 3


def test_nested_config_and_set_overrides(workspace, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"train": {"max_epochs": 7}, "synthetic": 0}))
    assert run("tstr-auth", "--data", workspace["data"], "--config", config,
               "--set", "train.batch_size=16", "--out", tmp_path / "x",
               "--dry-run") == 0
    resolved = json.loads(capsys.readouterr().out)["config"]
    assert resolved["train.max_epochs"] == 7
    assert resolved["train.batch_size"] == 16
    assert resolved["synthetic"] == 0


def test_usage_errors_exit_one(tmp_path, capsys):
    assert run("no-such-command") == 1
    assert run("synth-dataset", "--users", 2, "--gestures", 4,
               "--out", tmp_path / "x", "--bogus", 1) == 1
    assert run("synth-dataset", "--gestures", 4, "--out", tmp_path / "x") == 1
    assert "users" in capsys.readouterr().err
    assert run("synth-dataset", "--users", "two", "--gestures", 4,
               "--out", tmp_path / "x") == 1
    assert run("tstr-auth", "--data", tmp_path, "--strategy", "warp",
               "--out", tmp_path / "x") == 1
    assert run("synth-dataset", "--users", 2, "--gestures", 4,
               "--out", tmp_path / "x", "--set", "nonsense") == 1
    assert run() == 1


def test_data_errors_exit_two(tmp_path, capsys):
    assert run("eval", "--model", tmp_path / "missing.bin",
               "--positives", tmp_path / "p.csv",
               "--negatives", tmp_path / "n.csv",
               "--out", tmp_path / "out") == 2
    assert "does not exist" in capsys.readouterr().err

    tiny = tmp_path / "tiny"
    assert run("synth-dataset", "--users", 2, "--gestures", 2, "--non-gestures", 0,
               "--seed", 1, "--out", tiny) == 0
    assert run("split", "--data", tiny, "--out", tmp_path / "split") == 2
    assert "at least 3" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"user_count": 2}))
    assert run("synth-dataset", "--config", config, "--users", 2, "--gestures", 4,
               "--out", tmp_path / "x", "--dry-run") == 1
    assert "user_count" in capsys.readouterr().err
