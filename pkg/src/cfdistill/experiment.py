"""End-to-end experiment orchestration.

A JSON manifest (schema_version 1) names the world or dataset paths, the
factorization / feature / architecture / training settings, the regime
list, seeds, and folds.  ``run_experiment`` executes the stages

    world -> als -> features -> estimator -> tasks

persisting every artifact under the output directory.  A stage failure
aborts with the stage name; artifacts written so far stay on disk for
diagnosis.  Identical manifests reproduce identical result files in
deterministic mode.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import fileio
from .als import (
    AlsConfig,
    build_interaction_matrix,
    als_fit,
    item_vector,
    load_embedding,
    parse_log_file,
    save_embedding,
)
from .evaluation import plain_split, stratified_kfold, stratified_split
from .features import FeatureConfig, Waveform, melspectrogram
from .nn.network import PRESETS, build_network, load_checkpoint, save_checkpoint
from .transfer import (
    RegimeConfig,
    TaskData,
    TaskSpec,
    TrainConfig,
    train_cf_estimator,
    train_task,
)
from .world import World, WorldConfig, generate_world

SCHEMA_VERSION = 1
ALL_STAGES = ("world", "als", "features", "estimator", "tasks")


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"stage={stage}: {message}")
        self.stage = stage


def load_manifest(path):
    """Read and validate a manifest file."""
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest):
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"manifest schema_version must be {SCHEMA_VERSION}, "
            f"got {manifest.get('schema_version')!r}"
        )
    if ("world" in manifest) == ("datasets" in manifest):
        raise ValueError("manifest needs exactly one of 'world' or 'datasets'")
    if not manifest.get("seeds"):
        raise ValueError("manifest must list at least one seed")
    if not manifest.get("regimes"):
        raise ValueError("manifest must list at least one regime")
    for key in ("task", "architecture", "estimator", "split"):
        if key not in manifest:
            raise ValueError(f"manifest is missing the {key!r} section")


def _task_spec(manifest) -> TaskSpec:
    t = manifest["task"]
    return TaskSpec(
        kind=t["kind"],
        n_classes=t.get("n_classes"),
        target_dim=t.get("target_dim"),
        metric=t.get("metric", "accuracy" if t["kind"] == "classification" else "r_squared"),
    )


def _arch(manifest):
    a = manifest["architecture"]
    name = a.get("preset", "cf_estimator_desk")
    if name not in PRESETS:
        raise ValueError(f"unknown architecture preset {name!r}")
    kwargs = {}
    if "include_fifth_block" in a:
        kwargs["include_fifth_block"] = a["include_fifth_block"]
    specs, input_shape = PRESETS[name](a["n_channels"], **kwargs)
    return specs, input_shape, a["n_channels"]


def write_world(world: World, out_dir):
    """Persist a generated world: logs, audio, labels, true latents."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    with open(out_dir / "logs.tsv", "w", encoding="utf-8") as fh:
        for log in world.logs:
            fh.write(f"{log.user_id}\t{log.item_id}\t{log.count}\n")
    for item_id, wave in zip(world.item_ids, world.waveforms):
        fileio.write_raw_float32(out_dir / "audio" / f"{item_id}.f32", wave.samples, wave.sample_rate)
    with open(out_dir / "labels.csv", "w", encoding="utf-8") as fh:
        fh.write("item_id,label\n")
        for item_id, label in zip(world.item_ids, world.labels):
            if world.config.task_kind == "classification":
                fh.write(f"{item_id},{int(label)}\n")
            else:
                fh.write(f"{item_id},{float(label):.10g}\n")
    fileio.save_float_table(
        out_dir / "latents.ftab", world.item_ids, world.item_latents, meta={"kind": "true_latents"}
    )


def _load_labels_csv(path, kind):
    labels = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "item_id,label":
            raise ValueError(f"{path}: expected header 'item_id,label'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            item_id, value = line.split(",")
            labels[item_id] = int(value) if kind == "classification" else float(value)
    return labels


def _stage_world(ctx):
    manifest = ctx["manifest"]
    task = ctx["task"]
    if "world" in manifest:
        config = WorldConfig(**manifest["world"])
        if config.task_kind != task.kind:
            raise ValueError(
                f"world task_kind {config.task_kind!r} != manifest task kind {task.kind!r}"
            )
        world = generate_world(config)
        write_world(world, ctx["out_dir"] / "world")
        ctx["logs"] = world.logs
        ctx["item_ids"] = world.item_ids
        ctx["waveforms"] = world.waveforms
        ctx["labels"] = np.asarray(world.labels)
        ctx["world"] = world
    else:
        paths = manifest["datasets"]
        for key in ("logs", "audio_dir", "labels"):
            if key not in paths:
                raise ValueError(f"datasets section is missing {key!r}")
            if not Path(paths[key]).exists():
                raise ValueError(f"dataset path does not exist: {paths[key]}")
        ctx["logs"] = parse_log_file(paths["logs"])
        files = fileio.list_audio_files(paths["audio_dir"])
        rate = manifest.get("features", {}).get("sample_rate", 16000)
        ctx["item_ids"] = [f.stem for f in files]
        ctx["waveforms"] = [
            Waveform(*fileio.read_audio(f, expect_rate=rate)) for f in files
        ]
        label_map = _load_labels_csv(paths["labels"], task.kind)
        missing = [i for i in ctx["item_ids"] if i not in label_map]
        if missing:
            raise ValueError(f"labels file is missing {len(missing)} item ids, e.g. {missing[0]!r}")
        ctx["labels"] = np.asarray([label_map[i] for i in ctx["item_ids"]])


def _stage_als(ctx):
    manifest = ctx["manifest"]
    config = AlsConfig(**manifest.get("als", {}))
    matrix = build_interaction_matrix(ctx["logs"])
    embedding = als_fit(matrix, config)
    save_embedding(
        embedding,
        ctx["out_dir"] / "embeddings" / "item_embeddings.ftab",
        meta={"alpha": config.alpha, "reg_lambda": config.reg_lambda},
    )
    ctx["embedding"] = embedding


def _stage_features(ctx):
    manifest = ctx["manifest"]
    config = FeatureConfig(**manifest.get("features", {}))
    feature_dir = ctx["out_dir"] / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    grids = {}
    index = {}
    for item_id, wave in zip(ctx["item_ids"], ctx["waveforms"]):
        mel = melspectrogram(wave, config)
        digest = fileio.content_hash(wave.samples, sorted(vars(config).items()))
        path = feature_dir / f"{digest}.ftab"
        fileio.save_float_table(
            path,
            [f"mel_{i:03d}" for i in range(mel.n_mels)],
            mel.grid,
            meta={"item_id": item_id, "n_frames": mel.n_frames},
        )
        grids[item_id] = mel.grid
        index[item_id] = {"hash": digest, "path": path.name}
    with open(feature_dir / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    shapes = {g.shape for g in grids.values()}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent mel grid shapes: {sorted(shapes)}")
    ctx["grids"] = grids
    ctx["grid_shape"] = next(iter(shapes))


def _features_array(ctx, item_ids):
    grids = ctx["grids"]
    return np.stack([grids[i][:, :, None] for i in item_ids], axis=0)


def _split_counts(ctx):
    split = ctx["manifest"]["split"]
    n_items = len(ctx["item_ids"])
    n_est = split["n_estimator_items"]
    if not (0 < n_est < n_items):
        raise ValueError(f"n_estimator_items={n_est} must be in (0, {n_items})")
    return n_est


def _stage_estimator(ctx):
    manifest = ctx["manifest"]
    specs, input_shape, _ = _arch(manifest)
    if ctx["grid_shape"] != tuple(input_shape[:2]):
        raise ValueError(
            f"mel grids {ctx['grid_shape']} do not match architecture input "
            f"{tuple(input_shape[:2])}"
        )
    est = manifest["estimator"]
    n_est = _split_counts(ctx)
    est_ids = ctx["item_ids"][:n_est]
    embedding = ctx.get("embedding")
    if embedding is None:
        embedding = load_embedding(ctx["out_dir"] / "embeddings" / "item_embeddings.ftab")
        ctx["embedding"] = embedding
    targets = np.stack([item_vector(embedding, i) for i in est_ids], axis=0)
    if est.get("normalize_targets", False):
        norms = np.linalg.norm(targets, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("cannot normalize zero embedding targets")
        targets = targets / norms
    features = _features_array(ctx, est_ids)
    config = TrainConfig(
        epochs=est.get("epochs", 40),
        batch_size=est.get("batch_size", 16),
        learning_rate=est.get("learning_rate", 0.001),
        seed=est.get("seed", 0),
        patience=est.get("patience"),
        dtype=manifest.get("dtype", "float64"),
    )
    val_fraction = est.get("val_fraction", 0.2)
    train_idx, val_idx = plain_split(len(est_ids), (val_fraction,), seed=[config.seed, 3])
    model, info = train_cf_estimator(
        features, targets, specs, input_shape, config, train_idx, val_idx
    )
    save_checkpoint(
        model,
        ctx["out_dir"] / "checkpoints" / "cf_estimator.npz",
        extra={"preset": manifest["architecture"].get("preset", "cf_estimator_desk")},
    )
    curve_dir = ctx["out_dir"] / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    with open(curve_dir / "estimator.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in info["curve"]:
            fh.write(f"{row['epoch']},{row['train_loss']:.8f},{row['val_loss']:.8f}\n")
    ctx["estimator"] = model


def _make_splits(task: TaskSpec, labels, folds, seed, val_fraction, test_fraction):
    """Per-seed (train, val, test, fold_index) splits over the task items."""
    n = len(labels)
    if folds == 1:
        if task.kind == "classification":
            train, val, test = stratified_split(labels, (val_fraction, test_fraction), seed=seed)
        else:
            train, val, test = plain_split(n, (val_fraction, test_fraction), seed=seed)
        return [(train, val, test, 0)]
    out = []
    if task.kind == "classification":
        for f, (trainval, test) in enumerate(stratified_kfold(labels, k=folds, seed=seed)):
            sub_train, sub_val = stratified_split(labels[trainval], (val_fraction,), seed=[seed, f])
            out.append((trainval[sub_train], trainval[sub_val], test, f))
    else:
        rng = np.random.default_rng(seed)
        order = rng.permutation(n)
        chunks = np.array_split(order, folds)
        for f in range(folds):
            test = np.sort(chunks[f])
            trainval = np.sort(np.concatenate([chunks[g] for g in range(folds) if g != f]))
            sub_train, sub_val = plain_split(trainval.size, (val_fraction,), seed=[seed, f])
            out.append((trainval[sub_train], trainval[sub_val], test, f))
    return out


def _stage_tasks(ctx):
    manifest = ctx["manifest"]
    task = ctx["task"]
    specs, input_shape, n_channels = _arch(manifest)
    estimator = ctx.get("estimator")
    ckpt = ctx["out_dir"] / "checkpoints" / "cf_estimator.npz"
    needs_estimator = any(r["regime"] != "base" for r in manifest["regimes"])
    if estimator is None and needs_estimator:
        if not ckpt.exists():
            raise ValueError("estimator checkpoint missing; run train-estimator first")
        estimator = load_checkpoint(ckpt, expect_specs=specs, expect_input_shape=input_shape)
        ctx["estimator"] = estimator

    n_est = _split_counts(ctx)
    task_ids = ctx["item_ids"][n_est:]
    labels = ctx["labels"][n_est:]
    features = _features_array(ctx, task_ids)
    split_cfg = manifest["split"]
    folds = manifest.get("folds", 1)
    val_fraction = split_cfg.get("val_fraction", 0.15)
    test_fraction = split_cfg.get("test_fraction", 0.25)
    task_name = manifest["task"].get("name", task.kind)

    out_dir = ctx["out_dir"]
    (out_dir / "curves").mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    results = []
    fold_records = []
    for seed in manifest["seeds"]:
        splits = _make_splits(task, labels, folds, [seed, 17], val_fraction, test_fraction)
        for train_idx, val_idx, test_idx, fold in splits:
            fold_records.append(
                {
                    "seed": int(seed),
                    "fold": int(fold),
                    "train": train_idx.tolist(),
                    "val": val_idx.tolist(),
                    "test": test_idx.tolist(),
                }
            )
            data = TaskData(
                features=features,
                targets=labels,
                train_idx=train_idx,
                val_idx=val_idx,
                test_idx=test_idx,
            )
            for regime_dict in manifest["regimes"]:
                regime = RegimeConfig(
                    regime=regime_dict["regime"],
                    kd_weight=regime_dict.get("kd_weight", 1.0),
                    epochs=regime_dict.get("epochs", 30),
                    batch_size=regime_dict.get("batch_size", 16),
                    learning_rate=regime_dict.get("learning_rate", 0.001),
                    seed=int(seed),
                    patience=regime_dict.get("patience"),
                    dtype=manifest.get("dtype", "float64"),
                )
                start = time.perf_counter()
                model, result = train_task(
                    task,
                    data,
                    specs,
                    input_shape,
                    n_channels,
                    regime,
                    cf_estimator=None if regime.regime == "base" else estimator,
                    fold=fold,
                )
                result.seconds = 0.0 if ctx["deterministic"] else time.perf_counter() - start
                cell = f"{task_name}_{regime.regime}_F{n_channels}_s{seed}_f{fold}"
                with open(out_dir / "curves" / f"{cell}.csv", "w", encoding="utf-8") as fh:
                    fh.write("epoch,train_total,train_task,train_kd,val_task\n")
                    for row in result.curve:
                        fh.write(
                            f"{row['epoch']},{row['train_total']:.8f},"
                            f"{row['train_task']:.8f},{row['train_kd']:.8f},"
                            f"{row['val_task']:.8f}\n"
                        )
                save_checkpoint(
                    model.network,
                    out_dir / "checkpoints" / f"task_{cell}.npz",
                    extra={"regime": regime.regime, "cell": cell},
                )
                results.append((task_name, result))

    with open(out_dir / "folds.json", "w", encoding="utf-8") as fh:
        json.dump({"task_items": task_ids, "cells": fold_records}, fh, indent=2)
        fh.write("\n")
    write_results_csv(out_dir / "results.csv", results)
    ctx["results"] = [r for _, r in results]


def write_results_csv(path, results):
    """One row per (task, regime, channels, seed, fold) cell."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("task,regime,channels,seed,fold,metric,epochs,seconds\n")
        for task_name, r in results:
            fh.write(
                f"{task_name},{r.regime},{r.n_channels},{r.seed},{r.fold},"
                f"{r.metric_value:.6f},{r.epochs_run},{r.seconds:.3f}\n"
            )


def run_experiment(manifest, out_dir, deterministic=False, stages=ALL_STAGES):
    """Execute the pipeline; returns the ExperimentResult list.

    Any stage failure raises :class:`StageError` naming the stage;
    artifacts written before the failure remain on disk.
    """
    validate_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    ctx = {
        "manifest": manifest,
        "out_dir": out_dir,
        "deterministic": deterministic,
        "task": _task_spec(manifest),
    }
    stage_fns = {
        "world": _stage_world,
        "als": _stage_als,
        "features": _stage_features,
        "estimator": _stage_estimator,
        "tasks": _stage_tasks,
    }
    for name in stages:
        try:
            stage_fns[name](ctx)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, str(exc)) from exc
    return ctx.get("results", [])


def read_results_csv(path):
    """Parse a results.csv into a list of row dicts."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        expected = ["task", "regime", "channels", "seed", "fold", "metric", "epochs", "seconds"]
        if header != expected:
            raise ValueError(f"{path}: unexpected results header {header}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            task, regime, channels, seed, fold, metric, epochs, seconds = line.split(",")
            rows.append(
                {
                    "task": task,
                    "regime": regime,
                    "channels": int(channels),
                    "seed": int(seed),
                    "fold": int(fold),
                    "metric": float(metric),
                    "epochs": int(epochs),
                    "seconds": float(seconds),
                }
            )
    if not rows:
        raise ValueError(f"{path}: no result rows")
    return rows


def summarize_results(rows):
    """Per-regime means plus paired t-tests of every regime against base.

    Pairing is on (task, channels, seed, fold) cells.  Returns a dict with
    'means' and 'tests'; the test entry is None when pairing or variance
    preconditions fail (e.g. a single pair or zero-variance differences).
    """
    from .evaluation import paired_improvement_test

    by_regime = {}
    for row in rows:
        by_regime.setdefault(row["regime"], {})[
            (row["task"], row["channels"], row["seed"], row["fold"])
        ] = row["metric"]
    means = {reg: float(np.mean(list(cells.values()))) for reg, cells in by_regime.items()}
    tests = {}
    if "base" in by_regime:
        base_cells = by_regime["base"]
        for reg, cells in by_regime.items():
            if reg == "base":
                continue
            shared = sorted(set(cells) & set(base_cells))
            if len(shared) < 2:
                tests[reg] = None
                continue
            a = [cells[c] for c in shared]
            b = [base_cells[c] for c in shared]
            try:
                mean_diff, t_stat, p_val = paired_improvement_test(a, b)
                tests[reg] = {"mean_diff": mean_diff, "t": t_stat, "p": p_val, "n": len(shared)}
            except ValueError:
                tests[reg] = None
    return {"means": means, "tests": tests}
