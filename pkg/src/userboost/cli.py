"""Command-line pipeline surface.

Every stage of the workflow is a subcommand: dataset plumbing (``ingest``,
``preprocess``, ``synth-dataset``, ``split``), model work (``train-ae``,
``embed``, ``generate``, ``train-auth``, ``eval``), the experiment
protocols (``tstr-recognition``, ``tstr-auth``, ``burden-sweep``), and
figure rendering (``plot``).

Configuration is a flat mapping of dotted keys.  Values are resolved in
precedence order: built-in default, then JSON config file (``--config``,
which also accepts a previously emitted run manifest for replay), then
``USERBOOST_*`` environment variables, then command-line flags.  Every
run writes a run manifest listing its resolved config, a hash of it, the
seeds, and every file it read or wrote; replaying a manifest reproduces
CSV/JSON outputs byte for byte.

Exit codes: 0 success, 1 usage/config error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import __version__, authenticator, features, plots
from .data import (
    Dataset,
    FilterSpec,
    compute_channel_stats,
    generate_mini_dataset,
    ingest,
    lowpass_filter,
    read_canonical_csv,
    read_contact_times_csv,
    read_manifest,
    read_sensor_rows_csv,
    with_channel_stats,
    write_canonical_csv,
    write_manifest,
)
from .errors import ConfigError, DataError, TrainingDivergedError
from .genmodel import (
    LossWeights,
    REGULARIZERS,
    TrainConfig,
    encode_batch,
    load_model,
    save_model,
    train,
)
from .harness import (
    BurdenRow,
    CLASSIFIERS,
    ExperimentConfig,
    NEGATIVE_MODES,
    SplitSpec,
    aggregate_reports,
    enrolment_burden_sweep,
    louo_authentication,
    temporal_split,
    train_pool,
    tstr_gesture_recognition,
)
from .losses import RECON_KINDS
from .metrics import ScoreSet, read_report_json, sweep, write_rates_csv, write_report_json
from .sampling import DEFAULT_MIX_SIZE, STRATEGIES, embed_user, generate
from .seeding import derive_seed

__all__ = ["main"]

ENV_PREFIX = "USERBOOST_"

_VERSIONS = {
    "userboost": __version__,
    "checkpoint_format": 1,
    "forest_format": 1,
    "canonical_csv": 1,
}

_PLOT_KINDS = ("rates", "user-bars", "burden", "embedding")
_BURDEN_METRICS = ("far_at_zero", "eer_low", "eer_high", "auroc")


# ---------------------------------------------------------------------------
# Config schema


@dataclass(frozen=True)
class _Key:
    name: str
    kind: str  # int | float | bool | str | path | ints
    default: object = None
    required: bool = False
    help: str = ""
    choices: tuple[str, ...] = ()


def _parse_value(key: _Key, raw: str):
    """Parse a flag/env/--set string into the key's typed value."""
    try:
        if key.kind == "int":
            return int(raw)
        if key.kind == "float":
            return float(raw)
        if key.kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if key.kind == "ints":
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if not parts:
                raise ValueError(raw)
            return tuple(int(p) for p in parts)
        return str(raw)
    except ValueError:
        raise ConfigError(
            f"invalid value {raw!r} for {key.name} (expected {key.kind})"
        ) from None


def _coerce(key: _Key, value):
    """Validate a value that arrived already typed (from a JSON config)."""
    if value is None:
        return None
    if key.kind == "int" and isinstance(value, int) and not isinstance(value, bool):
        return value
    if key.kind == "float" and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if key.kind == "bool" and isinstance(value, bool):
        return value
    if key.kind == "ints" and isinstance(value, (list, tuple)):
        if all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return tuple(value)
    if key.kind in ("str", "path") and isinstance(value, str):
        return value
    raise ConfigError(f"config key {key.name} expects {key.kind}, got {value!r}")


_SEED = _Key("seed", "int", 0, help="root random seed for the run")


def _out(help_text: str) -> _Key:
    return _Key("out", "path", required=True, help=help_text)


def _data(help_text: str = "canonical CSV file or dataset directory") -> _Key:
    return _Key("data", "path", required=True, help=help_text)


def _split_fractions() -> tuple[_Key, _Key]:
    return (
        _Key("train_fraction", "float", 2.0 / 3.0, help="chronological share per user kept for training"),
        _Key("validation_fraction", "float", 0.2, help="share of the training pool drawn for validation"),
    )


def _train_keys() -> tuple[_Key, ...]:
    return (
        _Key("train.lr", "float", 1e-4, help="autoencoder learning rate"),
        _Key("train.patience", "int", 150, help="early-stopping patience in epochs"),
        _Key("train.max_epochs", "int", 2000, help="hard cap on training epochs"),
        _Key("train.batch_size", "int", 64, help="training batch size"),
        _Key("train.recon", "str", "klbmod_feature", help="reconstruction loss", choices=RECON_KINDS),
        _Key("train.regularizer", "str", "kl", help="latent regularizer", choices=REGULARIZERS),
    )


def _weight_keys() -> tuple[_Key, ...]:
    return (
        _Key("beta", "float", 1e-4, help="latent regularizer weight"),
        _Key("alpha", "float", 1e-2, help="rank-loss weight"),
        _Key("gamma", "float", 0.1, help="soft alignment smoothing temperature"),
        _Key("feature_mix", "float", 0.01, help="summary-feature admixture in combined losses"),
    )


SCHEMAS: dict[str, tuple[_Key, ...]] = {
    "ingest": (
        _Key("rows", "path", required=True, help="raw sensor rows CSV (user_id,gesture_id,timestamp,sensor,x,y,z)"),
        _Key("contacts", "path", help="NFC contact log CSV (gesture_id,contact_time)"),
        _Key("terminals", "path", help="terminal assignment CSV (gesture_id,terminal_id)"),
        _out("output dataset directory"),
    ),
    "preprocess": (
        _data(),
        _Key("filter.order", "int", 4, help="Butterworth filter order"),
        _Key("filter.cutoff_hz", "float", 10.0, help="low-pass cutoff frequency"),
        _out("output dataset directory"),
    ),
    "synth-dataset": (
        _Key("users", "int", required=True, help="number of synthetic users"),
        _Key("gestures", "int", required=True, help="gesture windows per user"),
        _Key("non_gestures", "int", -1, help="non-gesture windows per user (-1: one per gesture)"),
        _SEED,
        _out("output dataset directory"),
    ),
    "split": (
        _data(),
        *_split_fractions(),
        _SEED,
        _out("output split directory"),
    ),
    "train-ae": (
        _data("training data (a split directory uses its training pool)"),
        *_weight_keys(),
        _Key("lr", "float", 1e-4, help="learning rate"),
        _Key("patience", "int", 150, help="early-stopping patience in epochs"),
        _Key("max_epochs", "int", 2000, help="hard cap on training epochs"),
        _Key("batch_size", "int", 64, help="training batch size"),
        _Key("validation_fraction", "float", 0.2, help="share of gestures held out for early stopping"),
        _Key("recon", "str", "klbmod_feature", help="reconstruction loss", choices=RECON_KINDS),
        _Key("regularizer", "str", "kl", help="latent regularizer", choices=REGULARIZERS),
        _SEED,
        _out("checkpoint file path"),
    ),
    "embed": (
        _Key("model", "path", required=True, help="autoencoder checkpoint"),
        _data(),
        _out("embeddings CSV path"),
    ),
    "generate": (
        _Key("model", "path", required=True, help="autoencoder checkpoint"),
        _data("windows whose embeddings seed the sampler"),
        _Key("user", "int", required=True, help="target user id"),
        _Key("strategy", "str", "adversarial", help="latent sampling strategy", choices=STRATEGIES),
        _Key("count", "int", 500, help="number of synthetic windows"),
        _Key("k", "int", DEFAULT_MIX_SIZE, help="gestures mixed per self-mixed sample"),
        _SEED,
        _out("synthetic gestures CSV path"),
    ),
    "train-auth": (
        _Key("positives", "path", required=True, help="canonical CSV of the target user's windows"),
        _Key("negatives", "path", required=True, help="canonical CSV of impostor windows"),
        _Key("positive_weight", "float", 4.0, help="bootstrap weight of positive rows"),
        _SEED,
        _out("forest file path"),
    ),
    "eval": (
        _Key("model", "path", required=True, help="forest file"),
        _Key("positives", "path", required=True, help="canonical CSV of genuine attempts"),
        _Key("negatives", "path", required=True, help="canonical CSV of impostor attempts"),
        _Key("svg", "bool", False, help="also render the FAR/FRR threshold plot"),
        _out("output directory"),
    ),
    "tstr-recognition": (
        _Key("model", "path", required=True, help="autoencoder checkpoint"),
        _data(),
        _Key("classifier", "str", "rf100", help="recognition classifier", choices=CLASSIFIERS),
        _Key("n_per_class", "int", 240, help="training windows per class"),
        *_split_fractions(),
        _Key("svg", "bool", False, help="also render the FAR/FRR threshold plot"),
        _SEED,
        _out("output directory"),
    ),
    "tstr-auth": (
        _data(),
        _Key("real_per_terminal", "int", 2, help="real enrolment gestures per terminal"),
        _Key("synthetic", "int", 500, help="synthetic windows added to enrolment (0: baseline)"),
        _Key("strategy", "str", "adversarial", help="latent sampling strategy", choices=STRATEGIES),
        _Key("negative_mode", "str", "reconstructions", help="negative training class", choices=NEGATIVE_MODES),
        *_split_fractions(),
        *_train_keys(),
        *_weight_keys(),
        _Key("jobs", "int", 1, help="parallel leave-one-user-out folds"),
        _SEED,
        _out("output directory"),
    ),
    "burden-sweep": (
        _data(),
        _Key("strategy", "str", "adversarial", help="latent sampling strategy", choices=STRATEGIES),
        _Key("grid", "ints", required=True, help="comma-separated real-gestures-per-terminal values"),
        _Key("synthetic", "int", 500, help="synthetic windows in the with-synthetic arm"),
        _Key("negative_mode", "str", "reconstructions_plus_real", help="negative training class", choices=NEGATIVE_MODES),
        *_split_fractions(),
        *_train_keys(),
        *_weight_keys(),
        _Key("jobs", "int", 1, help="parallel leave-one-user-out folds"),
        _SEED,
        _out("output directory"),
    ),
    "plot": (
        _Key("kind", "str", required=True, help="which figure to render", choices=_PLOT_KINDS),
        _Key("input", "path", required=True, help="artifact to plot (report JSON, results CSV, or embeddings CSV)"),
        _Key("dims", "ints", (0, 1), help="latent dimensions for the embedding scatter"),
        _Key("metric", "str", "far_at_zero", help="metric for the burden curves", choices=_BURDEN_METRICS),
        _out("SVG file path"),
    ),
}

_HELP = {
    "ingest": "align raw sensor rows onto the canonical windows",
    "preprocess": "low-pass filter every window of a dataset",
    "synth-dataset": "generate a parametric desk-scale dataset",
    "split": "split a dataset chronologically per user",
    "train-ae": "train the gesture autoencoder",
    "embed": "export latent embeddings as CSV",
    "generate": "sample synthetic gestures for one user",
    "train-auth": "train the random-forest authenticator",
    "eval": "score a forest and emit report, rates, and optional plot",
    "tstr-recognition": "train-synthetic-test-real gesture recognition",
    "tstr-auth": "leave-one-user-out train-synthetic-test-real authentication",
    "burden-sweep": "enrolment-burden grid with and without synthetic data",
    "plot": "render an SVG figure from an emitted artifact",
}


# ---------------------------------------------------------------------------
# Config resolution


def _flatten(raw: Mapping, prefix: str = "") -> dict:
    """Flatten nested JSON objects into dotted keys."""
    flat: dict = {}
    for name, value in raw.items():
        dotted = f"{prefix}{name}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _env_name(key_name: str) -> str:
    return ENV_PREFIX + key_name.upper().replace(".", "_")


def _resolve_config(command: str, args: argparse.Namespace) -> dict:
    schema = {key.name: key for key in SCHEMAS[command]}
    config = {key.name: key.default for key in SCHEMAS[command]}

    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        if "command" in raw and "config" in raw:  # replaying a run manifest
            if raw["command"] != command:
                raise ConfigError(
                    f"manifest {args.config} records a {raw['command']!r} run, not {command!r}"
                )
            raw = raw["config"]
        for name, value in _flatten(raw).items():
            if name not in schema:
                raise ConfigError(f"unknown config key {name!r} for {command}")
            config[name] = _coerce(schema[name], value)

    for name, key in schema.items():
        env = os.environ.get(_env_name(name))
        if env is not None:
            config[name] = _parse_value(key, env)

    for name in schema:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            config[name] = flag_value

    for item in args.set or ():
        name, sep, raw_value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        if name not in schema:
            raise ConfigError(f"unknown config key {name!r} for {command}")
        config[name] = _parse_value(schema[name], raw_value)

    missing = [name for name, key in schema.items() if key.required and config[name] is None]
    if missing:
        raise ConfigError(f"missing required config for {command}: {', '.join(missing)}")
    for name, key in schema.items():
        if key.choices and config[name] is not None and config[name] not in key.choices:
            raise ConfigError(
                f"{name} must be one of {', '.join(str(c) for c in key.choices)}; got {config[name]!r}"
            )
    return config


def _validate_inputs(command: str, config: dict) -> None:
    """Check that every configured input path exists (dry-run validation)."""
    for key in SCHEMAS[command]:
        if key.kind == "path" and key.name != "out":
            value = config[key.name]
            if value is not None and not Path(value).exists():
                raise DataError(f"{key.name} path does not exist: {value}")


# ---------------------------------------------------------------------------
# Run manifests


def _jsonable(config: Mapping) -> dict:
    return {
        name: list(value) if isinstance(value, tuple) else value
        for name, value in sorted(config.items())
    }


def _config_hash(command: str, config: Mapping) -> str:
    canonical = json.dumps(
        {"command": command, "config": _jsonable(config)},
        sort_keys=True,
        separators=(",", ":"),
    )
    return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()


def _write_run_manifest(
    command: str,
    config: Mapping,
    inputs: Sequence[str | Path],
    outputs: Sequence[str | Path],
    anchor: Path,
) -> Path:
    path = anchor / "run-manifest.json" if anchor.is_dir() else Path(f"{anchor}.manifest.json")
    manifest = {
        "command": command,
        "config": _jsonable(config),
        "config_hash": _config_hash(command, config),
        "seeds": {"root": config["seed"]} if "seed" in config else {},
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs) + [str(path)],
        "versions": dict(_VERSIONS),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Dataset plumbing shared by the handlers


def _load_dataset(path_str: str) -> Dataset:
    """Load a canonical CSV file or a dataset directory.

    A directory must carry a ``dataset.json`` manifest.  Directories
    written by ``split`` load their training pool (train + validation
    files) with the recorded channel statistics attached; the test file
    stays untouched so downstream training can never see it.
    """
    path = Path(path_str)
    if path.is_dir():
        manifest_path = path / "dataset.json"
        if not manifest_path.exists():
            raise DataError(f"dataset directory {path} has no dataset.json")
        manifest = read_manifest(manifest_path)
        split = manifest.get("split") or {}
        if "parts" in split:
            names = [split["parts"]["train"], split["parts"]["validation"]]
        else:
            names = manifest["files"]
        windows: list = []
        for name in names:
            windows.extend(read_canonical_csv(path / name).windows)
        dataset = Dataset(windows=tuple(windows))
        if manifest.get("channel_means") is not None:
            dataset = with_channel_stats(
                dataset,
                np.asarray(manifest["channel_means"], dtype=np.float64),
                np.asarray(manifest["channel_stds"], dtype=np.float64),
            )
        return dataset
    if not path.exists():
        raise DataError(f"no dataset at {path}")
    return read_canonical_csv(path)


def _require_dir(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _prepare_file(path_str: str) -> Path:
    out = Path(path_str)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _write_dataset_dir(
    dataset: Dataset,
    out: Path,
    split: dict | None = None,
    channel_means=None,
    channel_stds=None,
) -> list[Path]:
    files: list[Path] = []
    for name, windows in (
        ("gestures.csv", dataset.gestures()),
        ("non_gestures.csv", dataset.non_gestures()),
    ):
        if windows:
            path = out / name
            write_canonical_csv(Dataset(windows=tuple(windows)), path)
            files.append(path)
    manifest_path = out / "dataset.json"
    write_manifest(
        manifest_path,
        [p.name for p in files],
        channel_means=channel_means,
        channel_stds=channel_stds,
        split=split,
    )
    files.append(manifest_path)
    return files


def _read_terminals_csv(path_str: str) -> dict[int, int]:
    terminals: dict[int, int] = {}
    with open(path_str, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"gesture_id", "terminal_id"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"terminal CSV {path_str} lacks columns: {sorted(missing)}")
        for record in reader:
            if record["terminal_id"]:
                terminals[int(record["gesture_id"])] = int(record["terminal_id"])
    return terminals


def _feature_matrix(windows) -> np.ndarray:
    return np.stack([features.extract_values(w.values) for w in windows])


def _split_spec(config: Mapping) -> SplitSpec:
    return SplitSpec(
        train_fraction=config["train_fraction"],
        validation_fraction=config["validation_fraction"],
        seed=derive_seed(config["seed"], "split"),
    )


def _train_config(config: Mapping) -> TrainConfig:
    return TrainConfig(
        learning_rate=config["train.lr"],
        patience=config["train.patience"],
        max_epochs=config["train.max_epochs"],
        batch_size=config["train.batch_size"],
        validation_fraction=config["validation_fraction"],
        seed=config["seed"],
        recon_kind=config["train.recon"],
        regularizer=config["train.regularizer"],
    )


def _loss_weights(config: Mapping) -> LossWeights:
    return LossWeights(
        beta=config["beta"],
        alpha=config["alpha"],
        gamma=config["gamma"],
        feature_mix=config["feature_mix"],
    )


# ---------------------------------------------------------------------------
# Subcommand handlers: each returns (inputs, outputs, manifest anchor)


def _cmd_ingest(config):
    rows = read_sensor_rows_csv(config["rows"])
    contacts = read_contact_times_csv(config["contacts"]) if config["contacts"] else {}
    terminals = _read_terminals_csv(config["terminals"]) if config["terminals"] else None
    dataset = ingest(rows, contacts, terminals)
    out = _require_dir(config["out"])
    files = _write_dataset_dir(dataset, out)
    inputs = [config[name] for name in ("rows", "contacts", "terminals") if config[name]]
    return inputs, files, out


def _cmd_preprocess(config):
    dataset = _load_dataset(config["data"])
    spec = FilterSpec(order=config["filter.order"], cutoff_hz=config["filter.cutoff_hz"])
    filtered = Dataset(windows=tuple(lowpass_filter(w, spec) for w in dataset.windows))
    out = _require_dir(config["out"])
    files = _write_dataset_dir(filtered, out)
    return [config["data"]], files, out


def _cmd_synth_dataset(config):
    non_gestures = None if config["non_gestures"] < 0 else config["non_gestures"]
    dataset = generate_mini_dataset(
        config["users"],
        config["gestures"],
        seed=config["seed"],
        non_gestures_per_user=non_gestures,
    )
    out = _require_dir(config["out"])
    files = _write_dataset_dir(dataset, out)
    return [], files, out


def _cmd_split(config):
    dataset = _load_dataset(config["data"])
    spec = SplitSpec(
        train_fraction=config["train_fraction"],
        validation_fraction=config["validation_fraction"],
        seed=config["seed"],
    )
    split = temporal_split(dataset, spec)
    pool_gestures = [w for w in train_pool(dataset, split).windows if w.label == "gesture"]
    means, stds = compute_channel_stats(pool_gestures)
    out = _require_dir(config["out"])
    files: list[Path] = []
    parts: dict[str, str] = {}
    for name, part in (("train", split.train), ("validation", split.validation), ("test", split.test)):
        path = out / f"{name}.csv"
        write_canonical_csv(part, path)
        files.append(path)
        parts[name] = path.name
    manifest_path = out / "dataset.json"
    write_manifest(
        manifest_path,
        [p.name for p in files],
        channel_means=means,
        channel_stds=stds,
        split={
            "train_fraction": config["train_fraction"],
            "validation_fraction": config["validation_fraction"],
            "seed": config["seed"],
            "parts": parts,
        },
    )
    files.append(manifest_path)
    return [config["data"]], files, out


def _cmd_train_ae(config):
    dataset = _load_dataset(config["data"])
    train_config = TrainConfig(
        learning_rate=config["lr"],
        patience=config["patience"],
        max_epochs=config["max_epochs"],
        batch_size=config["batch_size"],
        validation_fraction=config["validation_fraction"],
        seed=config["seed"],
        recon_kind=config["recon"],
        regularizer=config["regularizer"],
    )
    result = train(dataset, train_config, _loss_weights(config))
    out = _prepare_file(config["out"])
    save_model(out, result)
    curves = Path(f"{out}.curves.json")
    return [config["data"]], [out, curves], out


def _cmd_embed(config):
    trained = load_model(config["model"])
    dataset = _load_dataset(config["data"])
    x = np.stack([w.values for w in dataset.windows])
    normalized = ((x - trained.channel_means) / trained.channel_stds).astype(np.float32)
    means, log_variances = encode_batch(trained.model, normalized)
    out = _prepare_file(config["out"])
    dim = means.shape[1]
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["user_id", "terminal_id", "label", "order_index"]
            + [f"mean_{j}" for j in range(dim)]
            + [f"log_variance_{j}" for j in range(dim)]
        )
        for i, w in enumerate(dataset.windows):
            writer.writerow(
                [
                    str(w.user_id),
                    "" if w.terminal_id is None else str(w.terminal_id),
                    w.label,
                    str(w.order_index),
                ]
                + [repr(float(v)) for v in means[i]]
                + [repr(float(v)) for v in log_variances[i]]
            )
    return [config["model"], config["data"]], [out], out


def _cmd_generate(config):
    trained = load_model(config["model"])
    dataset = _load_dataset(config["data"])
    user = config["user"]
    target_windows = [w for w in dataset.gestures() if w.user_id == user]
    if not target_windows:
        raise DataError(f"user {user} has no gesture windows in {config['data']}")
    target = embed_user(trained, target_windows)
    others = []
    for other in dataset.users():
        if other == user:
            continue
        other_windows = [w for w in dataset.gestures() if w.user_id == other]
        if other_windows:
            others.append(embed_user(trained, other_windows))
    windows = generate(
        config["strategy"],
        trained,
        target,
        config["count"],
        seed=config["seed"],
        others=others or None,
        k=config["k"],
    )
    out = _prepare_file(config["out"])
    write_canonical_csv(Dataset(windows=tuple(windows)), out, synthetic=True)
    return [config["model"], config["data"]], [out], out


def _cmd_train_auth(config):
    positives = read_canonical_csv(config["positives"])
    negatives = read_canonical_csv(config["negatives"])
    matrix = np.concatenate(
        [_feature_matrix(positives.windows), _feature_matrix(negatives.windows)]
    )
    labels = [1] * len(positives.windows) + [0] * len(negatives.windows)
    forest = authenticator.fit(
        matrix, labels, seed=config["seed"], positive_weight=config["positive_weight"]
    )
    out = _prepare_file(config["out"])
    authenticator.save_forest(forest, out)
    summary = Path(f"{out}.summary.json")
    authenticator.write_forest_summary(forest, summary)
    return [config["positives"], config["negatives"]], [out, summary], out


def _cmd_eval(config):
    forest = authenticator.load_forest(config["model"])
    positives = read_canonical_csv(config["positives"])
    negatives = read_canonical_csv(config["negatives"])
    report = sweep(
        ScoreSet(
            positive_scores=authenticator.predict_matrix(forest, _feature_matrix(positives.windows)),
            negative_scores=authenticator.predict_matrix(forest, _feature_matrix(negatives.windows)),
        )
    )
    out = _require_dir(config["out"])
    files = [out / "report.json", out / "rates.csv"]
    write_report_json(report, files[0])
    write_rates_csv(report, files[1])
    if config["svg"]:
        svg = out / "rates.svg"
        plots.plot_rates(report, svg)
        files.append(svg)
    return [config["model"], config["positives"], config["negatives"]], files, out


def _cmd_tstr_recognition(config):
    trained = load_model(config["model"])
    dataset = _load_dataset(config["data"])
    report = tstr_gesture_recognition(
        trained,
        dataset,
        config["classifier"],
        seed=config["seed"],
        split_spec=_split_spec(config),
        n_per_class=config["n_per_class"],
    )
    out = _require_dir(config["out"])
    files = [out / "report.json", out / "rates.csv"]
    write_report_json(report, files[0])
    write_rates_csv(report, files[1])
    if config["svg"]:
        svg = out / "rates.svg"
        plots.plot_rates(report, svg)
        files.append(svg)
    return [config["model"], config["data"]], files, out


def _users_csv_path(out: Path) -> Path:
    return out / "users.csv"


def _cmd_tstr_auth(config):
    dataset = _load_dataset(config["data"])
    experiment = ExperimentConfig(
        held_out_user=dataset.users()[0],  # placeholder; every user gets a fold
        real_gestures_per_terminal=config["real_per_terminal"],
        synthetic_count=config["synthetic"],
        strategy=config["strategy"],
        negative_class_mode=config["negative_mode"],
        seed=config["seed"],
    )
    reports = louo_authentication(
        dataset,
        experiment,
        split_spec=_split_spec(config),
        train_config=_train_config(config),
        weights=_loss_weights(config),
        jobs=config["jobs"],
    )
    aggregate = aggregate_reports(reports)
    out = _require_dir(config["out"])
    users_csv = _users_csv_path(out)
    with open(users_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["user_id", "far_at_zero", "eer_low", "eer_high", "auroc", "negative_class_mode"]
        )
        for user in sorted(reports):
            r = reports[user]
            writer.writerow(
                [
                    str(user),
                    repr(r.far_at_zero),
                    repr(r.eer_low),
                    repr(r.eer_high),
                    repr(r.auroc),
                    config["negative_mode"],
                ]
            )
    aggregate_json = out / "aggregate.json"
    aggregate_json.write_text(
        json.dumps(
            {
                "n_users": aggregate.n_users,
                "far_at_zero": aggregate.far_at_zero,
                "eer_low": aggregate.eer_low,
                "eer_high": aggregate.eer_high,
                "auroc": aggregate.auroc,
                "real_gestures_per_terminal": config["real_per_terminal"],
                "synthetic_count": config["synthetic"],
                "strategy": config["strategy"],
                "negative_class_mode": config["negative_mode"],
            },
            indent=2,
        )
        + "\n"
    )
    bars = out / "far_bars.svg"
    plots.plot_user_bars({u: r.far_at_zero for u, r in reports.items()}, bars)
    return [config["data"]], [users_csv, aggregate_json, bars], out


def _burden_row_dict(row: BurdenRow) -> dict:
    return {
        "real_per_terminal": row.real_per_terminal,
        "synthetic_count": row.synthetic_count,
        "n_users": row.n_users,
        "unavailable_users": list(row.unavailable_users),
        "far_at_zero": row.far_at_zero,
        "eer_low": row.eer_low,
        "eer_high": row.eer_high,
        "auroc": row.auroc,
    }


def _cmd_burden_sweep(config):
    dataset = _load_dataset(config["data"])
    rows = enrolment_burden_sweep(
        dataset,
        config["strategy"],
        grid=config["grid"],
        seed=config["seed"],
        synthetic_count=config["synthetic"],
        negative_class_mode=config["negative_mode"],
        split_spec=_split_spec(config),
        train_config=_train_config(config),
        weights=_loss_weights(config),
        jobs=config["jobs"],
    )
    out = _require_dir(config["out"])
    sweep_csv = out / "sweep.csv"
    with open(sweep_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "real_per_terminal",
                "synthetic_count",
                "n_users",
                "unavailable_users",
                "far_at_zero",
                "eer_low",
                "eer_high",
                "auroc",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    str(row.real_per_terminal),
                    str(row.synthetic_count),
                    str(row.n_users),
                    ";".join(str(u) for u in row.unavailable_users),
                    "" if row.far_at_zero is None else repr(row.far_at_zero),
                    "" if row.eer_low is None else repr(row.eer_low),
                    "" if row.eer_high is None else repr(row.eer_high),
                    "" if row.auroc is None else repr(row.auroc),
                ]
            )
    sweep_json = out / "sweep.json"
    sweep_json.write_text(
        json.dumps([_burden_row_dict(row) for row in rows], indent=2) + "\n"
    )
    curves = out / "burden.svg"
    plots.plot_burden_curves(rows, curves)
    return [config["data"]], [sweep_csv, sweep_json, curves], out


def _read_sweep_csv(path: Path) -> list[BurdenRow]:
    rows: list[BurdenRow] = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                BurdenRow(
                    real_per_terminal=int(record["real_per_terminal"]),
                    synthetic_count=int(record["synthetic_count"]),
                    n_users=int(record["n_users"]),
                    unavailable_users=tuple(
                        int(u) for u in record["unavailable_users"].split(";") if u
                    ),
                    far_at_zero=float(record["far_at_zero"]) if record["far_at_zero"] else None,
                    eer_low=float(record["eer_low"]) if record["eer_low"] else None,
                    eer_high=float(record["eer_high"]) if record["eer_high"] else None,
                    auroc=float(record["auroc"]) if record["auroc"] else None,
                )
            )
    return rows


def _cmd_plot(config):
    kind = config["kind"]
    input_path = Path(config["input"])
    if not input_path.exists():
        raise DataError(f"no artifact at {input_path}")
    out = _prepare_file(config["out"])
    if kind == "rates":
        plots.plot_rates(read_report_json(input_path), out)
    elif kind == "user-bars":
        values: dict[int, float] = {}
        with open(input_path, newline="") as fh:
            for record in csv.DictReader(fh):
                values[int(record["user_id"])] = float(record["far_at_zero"])
        plots.plot_user_bars(values, out)
    elif kind == "burden":
        plots.plot_burden_curves(_read_sweep_csv(input_path), out, metric=config["metric"])
    else:
        dims = config["dims"]
        if len(dims) != 2:
            raise ConfigError(f"dims needs exactly two values, got {dims}")
        means: list[list[float]] = []
        user_ids: list[int] = []
        with open(input_path, newline="") as fh:
            reader = csv.DictReader(fh)
            mean_columns = [c for c in reader.fieldnames or () if c.startswith("mean_")]
            if not mean_columns:
                raise DataError(f"{input_path} has no mean_* columns")
            for record in reader:
                user_ids.append(int(record["user_id"]))
                means.append([float(record[c]) for c in mean_columns])
        plots.plot_embedding_scatter(np.array(means), user_ids, out, dims=tuple(dims))
    return [input_path], [out], out


_HANDLERS: dict[str, Callable[[dict], tuple]] = {
    "ingest": _cmd_ingest,
    "preprocess": _cmd_preprocess,
    "synth-dataset": _cmd_synth_dataset,
    "split": _cmd_split,
    "train-ae": _cmd_train_ae,
    "embed": _cmd_embed,
    "generate": _cmd_generate,
    "train-auth": _cmd_train_auth,
    "eval": _cmd_eval,
    "tstr-recognition": _cmd_tstr_recognition,
    "tstr-auth": _cmd_tstr_auth,
    "burden-sweep": _cmd_burden_sweep,
    "plot": _cmd_plot,
}


# ---------------------------------------------------------------------------
# Parser and entry point


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems through the exit-1 path."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _flag_parser(key: _Key):
    def parse(raw: str):
        try:
            return _parse_value(key, raw)
        except ConfigError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _build_parser() -> _Parser:
    parser = _Parser(prog="userboost", description="Synthetic gesture pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    for command, keys in SCHEMAS.items():
        sub = subparsers.add_parser(command, help=_HELP[command], description=_HELP[command])
        sub.add_argument("--config", metavar="PATH", help="JSON config file or run manifest to replay")
        sub.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override one config key (dotted names allowed)",
        )
        sub.add_argument(
            "--dry-run",
            action="store_true",
            help="validate the resolved config and exit without writing anything",
        )
        for key in keys:
            default_note = "" if key.required else f" (default {key.default!r})"
            choice_note = f" [{'|'.join(str(c) for c in key.choices)}]" if key.choices else ""
            sub.add_argument(
                "--" + key.name.replace("_", "-"),
                dest=key.name,
                type=_flag_parser(key),
                default=None,
                metavar=key.kind.upper(),
                help=key.help + choice_note + default_note,
            )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        config = _resolve_config(args.command, args)
        _validate_inputs(args.command, config)
        if args.dry_run:
            print(
                json.dumps(
                    {
                        "command": args.command,
                        "config": _jsonable(config),
                        "config_hash": _config_hash(args.command, config),
                    },
                    indent=2,
                )
            )
            return 0
        inputs, outputs, anchor = _HANDLERS[args.command](config)
        manifest_path = _write_run_manifest(args.command, config, inputs, outputs, anchor)
        print(f"wrote {manifest_path}")
        return 0
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
