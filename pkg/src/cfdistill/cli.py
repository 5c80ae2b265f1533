"""Command-line interface.

Subcommands mirror the pipeline stages:

    generate-world  sample a synthetic world to disk
    als-fit         factorize a log file into an item embedding table
    features        extract mel grids for a directory of audio files
    train-estimator run the pipeline through estimator training
    train-task      train task models (needs an estimator checkpoint)
    run             full pipeline, results.csv at the end
    evaluate        per-regime means and paired t-tests of a results.csv

Errors print a single machine-parsable line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fileio
from .als import AlsConfig, als_fit, build_interaction_matrix, parse_log_file, save_embedding
from .experiment import (
    StageError,
    load_manifest,
    read_results_csv,
    run_experiment,
    summarize_results,
    write_world,
)
from .features import FeatureConfig, Waveform, melspectrogram
from .world import WorldConfig, generate_world


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _cmd_generate_world(args):
    config_dict = _read_json(args.config)
    config_dict = config_dict.get("world", config_dict)
    if args.seed is not None:
        config_dict["seed"] = args.seed
    world = generate_world(WorldConfig(**config_dict))
    write_world(world, args.out)
    print(
        f"wrote world: {world.config.n_users} users, {world.config.n_items} items, "
        f"{len(world.logs)} interactions -> {args.out}"
    )
    return 0


def _cmd_als_fit(args):
    overrides = _read_json(args.config) if args.config else {}
    overrides = overrides.get("als", overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = AlsConfig(**overrides)
    matrix = build_interaction_matrix(parse_log_file(args.logs))
    embedding = als_fit(matrix, config)
    save_embedding(embedding, args.out, meta={"alpha": config.alpha, "reg_lambda": config.reg_lambda})
    print(
        f"factorized {matrix.n_users}x{matrix.n_items} matrix "
        f"({matrix.nnz} non-zeros) into {config.n_factors} factors -> {args.out}"
    )
    return 0


def _cmd_features(args):
    overrides = _read_json(args.config) if args.config else {}
    overrides = overrides.get("features", overrides)
    config = FeatureConfig(**overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for path in fileio.list_audio_files(args.audio_dir):
        samples, rate = fileio.read_audio(path, expect_rate=config.sample_rate)
        mel = melspectrogram(Waveform(samples, rate), config)
        digest = fileio.content_hash(samples, sorted(vars(config).items()))
        fileio.save_float_table(
            out_dir / f"{digest}.ftab",
            [f"mel_{i:03d}" for i in range(mel.n_mels)],
            mel.grid,
            meta={"item_id": path.stem, "n_frames": mel.n_frames},
        )
        index[path.stem] = {"hash": digest, "path": f"{digest}.ftab"}
    with open(out_dir / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"extracted {len(index)} mel grids -> {args.out}")
    return 0


def _resolve_out_dir(args, manifest):
    out = args.out or manifest.get("output_dir")
    if not out:
        raise ValueError("no output directory: pass --out or set output_dir in the manifest")
    return out


def _run_stages(args, stages):
    manifest = load_manifest(args.manifest)
    out_dir = _resolve_out_dir(args, manifest)
    results = run_experiment(
        manifest, out_dir, deterministic=args.deterministic, stages=stages
    )
    return manifest, out_dir, results


def _cmd_train_estimator(args):
    _, out_dir, _ = _run_stages(args, ("world", "als", "features", "estimator"))
    print(f"estimator trained -> {Path(out_dir) / 'checkpoints' / 'cf_estimator.npz'}")
    return 0


def _cmd_train_task(args):
    _, out_dir, results = _run_stages(args, ("world", "features", "tasks"))
    print(f"trained {len(results)} task cells -> {Path(out_dir) / 'results.csv'}")
    return 0


def _cmd_run(args):
    _, out_dir, results = _run_stages(args, ("world", "als", "features", "estimator", "tasks"))
    print(f"pipeline complete: {len(results)} result rows -> {Path(out_dir) / 'results.csv'}")
    return 0


def _cmd_evaluate(args):
    rows = read_results_csv(args.results)
    summary = summarize_results(rows)
    for regime in sorted(summary["means"]):
        print(f"mean {regime}: {summary['means'][regime]:.6f}")
    for regime in sorted(summary["tests"]):
        test = summary["tests"][regime]
        if test is None:
            print(f"paired t-test {regime} vs base: not available")
        else:
            print(
                f"paired t-test {regime} vs base: mean_diff={test['mean_diff']:+.6f} "
                f"t={test['t']:.4f} p={test['p']:.4f} n={test['n']}"
            )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cfdistill",
        description="Listening-log embeddings and cross-domain transfer to audio models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-world", help="sample a synthetic world to disk")
    p.add_argument("config", help="world config JSON")
    p.add_argument("out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(fn=_cmd_generate_world)

    p = sub.add_parser("als-fit", help="factorize a listening log file")
    p.add_argument("logs", help="tab-separated log file")
    p.add_argument("out", help="output embedding table path")
    p.add_argument("--config", default=None, help="ALS config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(fn=_cmd_als_fit)

    p = sub.add_parser("features", help="extract mel grids for an audio directory")
    p.add_argument("audio_dir", help="directory of .wav / .f32 files")
    p.add_argument("out", help="output cache directory")
    p.add_argument("--config", default=None, help="feature config JSON")
    p.set_defaults(fn=_cmd_features)

    for name, fn in [
        ("train-estimator", _cmd_train_estimator),
        ("train-task", _cmd_train_task),
        ("run", _cmd_run),
    ]:
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} from a manifest")
        p.add_argument("manifest", help="experiment manifest JSON")
        p.add_argument("--out", default=None, help="output directory (overrides manifest)")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="byte-reproducible outputs (wall times written as 0)",
        )
        p.set_defaults(fn=fn)

    p = sub.add_parser("evaluate", help="summarize a results.csv")
    p.add_argument("results", help="results.csv path")
    p.set_defaults(fn=_cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"cfdistill: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"cfdistill: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
