"""Operator entry point: synth, preprocess, train, evaluate, predict.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
divergence. Every command validates its configuration before touching the
filesystem; all outputs land under the configured output directory, which
is guarded by a lock file against concurrent runs. TRAJFORMER_THREADS caps
worker parallelism for feature building.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import RunConfig, build_run_config
from .data import WindowConfig, load_dataset_root, write_tracks
from .errors import ConfigError, DataError, DivergenceError
from .evaluation import cv_kalman_predict, emit_report, evaluate
from .features import FeatureStats, PolarGridConfig, SemanticConfig
from .model import (Checkpoint, ModelParams, load_checkpoint, predict_autoregressive,
                    save_checkpoint)
from .pipeline import (FeatureSet, build_feature_set, load_feature_cache, resample_scene,
                       save_feature_cache)
from .plots import render_window_svg
from .synth import SCENARIOS, synth_dataset
from .training import AdamState, TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


class _OutputLock:
    """One run per output directory; stale locks must be removed by hand."""

    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output directory is locked by {self.path}") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _config_from_args(args) -> RunConfig:
    return build_run_config(args.config, args.set or [])


def _checkpoint_meta(cfg: RunConfig, train_dataset: str, epochs_done: int) -> dict:
    return {
        "train_dataset": train_dataset,
        "epochs_done": epochs_done,
        "context": cfg.context,
        "window": {"delta": cfg.window.delta, "kappa": cfg.window.kappa,
                   "stride": cfg.window.stride, "rate_hz": cfg.window.rate_hz},
        "grid": asdict(cfg.grid),
        "semantic": asdict(cfg.semantic),
    }


def _atomic_save_checkpoint(path: Path, params, stats, meta, adam) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    save_checkpoint(tmp, params, stats, meta, adam)
    os.replace(tmp, path)


def _features_for(fset: FeatureSet, context: bool) -> np.ndarray:
    # offsets occupy the first two feature columns, so the context-off
    # ablation is a plain slice of the cached full feature blocks
    if context and not fset.context:
        raise ConfigError("feature cache was built without context features")
    return fset.features if context else fset.features[:, :, :2]


# ------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    if args.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {args.scenario!r}; valid: {', '.join(SCENARIOS)}")
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    root = synth_dataset(args.out, args.scenario, args.n, args.seed, args.scenes, args.rate)
    print(f"wrote {args.scenes} scene(s) of scenario {args.scenario!r} to {root}")
    return 0


def _preprocess_root(cfg: RunConfig, root: str, tag: str) -> int:
    scenes = [resample_scene(s, cfg.window.rate_hz) for s in load_dataset_root(root, cfg.adapter)]
    canon_dir = cfg.out_dir / "canonical" / tag
    fset = build_feature_set(scenes, cfg.window, cfg.grid, cfg.semantic, cfg.context,
                             resampled=True)
    counts = {s.scene_map.scene_id: 0 for s in scenes}
    for scene_id, _, _ in fset.keys:
        counts[scene_id] += 1
    total = 0
    for scene in scenes:
        scene_dir = canon_dir / scene.scene_map.scene_id
        scene_dir.mkdir(parents=True, exist_ok=True)
        write_tracks(scene_dir / "tracks.csv", scene.tracks, scene.scene_map.scene_id)
        count = counts[scene.scene_map.scene_id]
        total += count
        print(f"{tag}/{scene.scene_map.scene_id}: {count} windows")
    cache_dir = cfg.out_dir / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    save_feature_cache(cache_dir / f"{tag}_features.bin", fset, cfg.window, cfg.grid,
                       cfg.semantic)
    if total == 0:
        print(f"warning: no windows extracted from {root}", file=sys.stderr)
    return total


def cmd_preprocess(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.train_root:
        raise ConfigError("data.train_root is required for preprocess")
    with _OutputLock(cfg.out_dir):
        _preprocess_root(cfg, cfg.train_root, "train")
        if cfg.test_root:
            _preprocess_root(cfg, cfg.test_root, "test")
    return 0


def _cache_matches(meta: dict, cfg: RunConfig) -> bool:
    return (
        meta.get("window") == {"delta": cfg.window.delta, "kappa": cfg.window.kappa,
                               "stride": cfg.window.stride, "rate_hz": cfg.window.rate_hz}
        and meta.get("grid") == asdict(cfg.grid)
        and meta.get("semantic") == asdict(cfg.semantic)
    )


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    cache_path = cfg.out_dir / "cache" / "train_features.bin"
    if not cache_path.exists():
        raise DataError(f"feature cache {cache_path} not found; run preprocess first")
    fset, cache_meta = load_feature_cache(cache_path)
    if not _cache_matches(cache_meta, cfg):
        raise ConfigError(f"feature cache {cache_path} was built with different settings")
    if len(fset) == 0:
        raise DataError("feature cache holds no windows")

    features = _features_for(fset, cfg.context)
    stats = FeatureStats.fit([features[i] for i in range(len(features))])
    standardized = [stats.apply(features[i]) for i in range(len(features))]
    targets = [fset.target_offsets[i] for i in range(len(fset))]
    train_dataset = Path(cfg.train_root).name if cfg.train_root else "train"

    with _OutputLock(cfg.out_dir):
        start_epoch = 0
        state = None
        params = ModelParams(cfg.model, seed=cfg.seed)
        if args.resume:
            ckpt = load_checkpoint(args.resume)
            if ckpt.params.config != cfg.model:
                raise ConfigError("resume checkpoint config does not match run config")
            params = ckpt.params
            stats = ckpt.stats
            standardized = [stats.apply(features[i]) for i in range(len(features))]
            start_epoch = int(ckpt.meta["epochs_done"])
            if ckpt.adam_moments is not None:
                state = AdamState.restore(params, *ckpt.adam_moments)
        remaining = cfg.train.epochs - start_epoch
        if remaining <= 0:
            print(f"nothing to do: {start_epoch} epochs already trained")
            return 0
        run_cfg = TrainConfig(
            epochs=remaining, learning_rate=cfg.train.learning_rate, beta1=cfg.train.beta1,
            beta2=cfg.train.beta2, eps=cfg.train.eps, batch_size=cfg.train.batch_size,
            seed=cfg.train.seed, grad_clip=cfg.train.grad_clip,
            val_fraction=cfg.train.val_fraction,
        )

        log_path = cfg.out_dir / "train_log.csv"
        mode = "a" if (args.resume and log_path.exists()) else "w"
        log_file = open(log_path, mode, newline="", encoding="utf-8")
        log = csv.writer(log_file)
        if mode == "w":
            log.writerow(["epoch", "train_loss", "val_loss", "wall_seconds"])

        ckpt_path = cfg.out_dir / "model.ckpt"

        def on_epoch(epoch, epoch_params, epoch_state, row):
            log.writerow([row["epoch"], repr(row["train_loss"]),
                          "" if np.isnan(row["val_loss"]) else repr(row["val_loss"]),
                          f"{row['wall_seconds']:.3f}"])
            log_file.flush()
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                meta = _checkpoint_meta(cfg, train_dataset, epoch + 1)
                adam = (epoch_state.m, epoch_state.v, epoch_state.tau)
                _atomic_save_checkpoint(ckpt_path, epoch_params, stats, meta, adam)

        try:
            history, state = train(params, standardized, targets, run_cfg, state=state,
                                    start_epoch=start_epoch, on_epoch=on_epoch)
        finally:
            log_file.close()
        meta = _checkpoint_meta(cfg, train_dataset, start_epoch + remaining)
        _atomic_save_checkpoint(ckpt_path, params, stats, meta,
                                (state.m, state.v, state.tau))
        print(f"trained {remaining} epoch(s); final train loss "
              f"{history[-1]['train_loss']:.6f}; checkpoint {ckpt_path}")
    return 0


def _model_predictor(ckpt: Checkpoint, context: bool):
    stats = ckpt.stats

    def predict(case):
        features = case.features if context else case.features[:, :2]
        return predict_autoregressive(ckpt.params, stats.apply(features),
                                      case.last_obs_m, len(case.fut_m))

    return predict


def _load_eval_cases(cfg: RunConfig, root: str) -> FeatureSet:
    scenes = [resample_scene(s, cfg.window.rate_hz) for s in load_dataset_root(root, cfg.adapter)]
    return build_feature_set(scenes, cfg.window, cfg.grid, cfg.semantic, context=True,
                             resampled=True)


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.self_test_oracle and "oracle" not in methods:
        methods.append("oracle")
    valid = {"context_tf", "vanilla_tf", "cv_kalman", "oracle"}
    unknown = [m for m in methods if m not in valid]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; valid: {sorted(valid)}")
    test_root = args.test_root or cfg.test_root
    if not test_root:
        raise ConfigError("a test dataset is required (--test-root or data.test_root)")
    if not Path(test_root).is_dir():
        raise ConfigError(f"test dataset root {test_root!r} does not exist")

    predictors = {}
    train_dataset = None
    if "oracle" in methods:
        predictors["oracle"] = lambda case: case.fut_m.copy()
    if "context_tf" in methods:
        if not args.checkpoint:
            raise ConfigError("method context_tf needs --checkpoint")
        ckpt = load_checkpoint(args.checkpoint)
        if not ckpt.meta.get("context"):
            raise ConfigError("--checkpoint was trained without context features")
        _require_window_match(ckpt, cfg)
        train_dataset = ckpt.meta.get("train_dataset")
        predictors["context_tf"] = _model_predictor(ckpt, context=True)
    if "vanilla_tf" in methods:
        if not args.vanilla_checkpoint:
            raise ConfigError("method vanilla_tf needs --vanilla-checkpoint")
        vckpt = load_checkpoint(args.vanilla_checkpoint)
        if vckpt.meta.get("context"):
            raise ConfigError("--vanilla-checkpoint was trained with context features")
        _require_window_match(vckpt, cfg)
        train_dataset = train_dataset or vckpt.meta.get("train_dataset")
        predictors["vanilla_tf"] = _model_predictor(vckpt, context=False)
    if "cv_kalman" in methods:
        dt = 1.0 / cfg.window.rate_hz
        predictors["cv_kalman"] = lambda case: cv_kalman_predict(
            case.obs_m, len(case.fut_m), dt,
            cfg.kalman_process_noise, cfg.kalman_measurement_noise)
    if not predictors:
        raise ConfigError("no methods requested")

    with _OutputLock(cfg.out_dir):
        fset = _load_eval_cases(cfg, test_root)
        if len(fset) == 0:
            raise DataError(f"no evaluation windows in {test_root}")
        table = evaluate(
            predictors, fset.cases(), cfg.horizons_s, cfg.window.rate_hz,
            dataset=Path(test_root).name, train_dataset=train_dataset,
            allow_same_dataset=args.allow_same_dataset,
            at_horizon=cfg.at_horizon, pooled_rmse=cfg.pooled_rmse,
        )
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        emit_report(table, cfg.out_dir / "report.csv", "csv")
        emit_report(table, cfg.out_dir / "report.md", "markdown")
        print(f"wrote {cfg.out_dir / 'report.csv'} and report.md "
              f"({len(table.rows)} rows over {len(fset)} windows)")
    return 0


def _require_window_match(ckpt: Checkpoint, cfg: RunConfig) -> None:
    if ckpt.meta.get("window") != {"delta": cfg.window.delta, "kappa": cfg.window.kappa,
                                   "stride": cfg.window.stride, "rate_hz": cfg.window.rate_hz}:
        raise ConfigError("checkpoint window settings do not match the run config")


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    meta = ckpt.meta
    window = WindowConfig(**meta["window"])
    grid = PolarGridConfig(**meta["grid"])
    semantic = SemanticConfig(**meta["semantic"])
    context = bool(meta.get("context"))
    if not Path(args.root).is_dir():
        raise ConfigError(f"window source {args.root!r} does not exist")
    out_dir = Path(args.out)

    with _OutputLock(out_dir):
        scenes = [resample_scene(s, window.rate_hz)
                  for s in load_dataset_root(args.root, args.adapter)]
        fset = build_feature_set(scenes, window, grid, semantic, context=True, resampled=True)
        if len(fset) == 0:
            raise DataError(f"no windows in {args.root}")
        maps_by_scene = {s.scene_map.scene_id: s.scene_map for s in scenes}
        predictor = _model_predictor(ckpt, context)

        out_dir.mkdir(parents=True, exist_ok=True)
        dump_path = out_dir / "predictions.csv"
        with open(dump_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["scene_id", "ego_id", "start_index", "step",
                             "pred_x_m", "pred_y_m", "gt_x_m", "gt_y_m"])
            for case in fset.cases():
                pred = predictor(case)
                for step in range(len(pred)):
                    writer.writerow([case.scene_id, case.ego_id, case.start_index, step + 1,
                                     repr(float(pred[step, 0])), repr(float(pred[step, 1])),
                                     repr(float(case.fut_m[step, 0])),
                                     repr(float(case.fut_m[step, 1]))])
                if args.plot:
                    scene_map = maps_by_scene[case.scene_id]
                    svg = render_window_svg(
                        scene_map, case.obs_m, pred, case.fut_m,
                        title=f"{case.scene_id} {case.ego_id} @{case.start_index}")
                    name = f"{case.scene_id}_{case.ego_id}_{case.start_index}.svg"
                    (out_dir / name).write_text(svg, encoding="utf-8")
        print(f"wrote {dump_path}" + (" and SVG plots" if args.plot else ""))
    return 0


# -------------------------------------------------------------- parser

def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajformer",
                     description="trajectory forecasting pipeline (synthesize, preprocess, "
                                 "train, evaluate, predict)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("synth", help="generate a synthetic dataset root")
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, default=2, help="pedestrian tracks per scene")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=10.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="resample, window and cache features")
    add_config_args(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on the cached features")
    add_config_args(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score methods on a held-out dataset")
    add_config_args(p)
    p.add_argument("--checkpoint", help="context model checkpoint")
    p.add_argument("--vanilla-checkpoint", help="context-off ablation checkpoint")
    p.add_argument("--test-root", help="test dataset root (defaults to data.test_root)")
    p.add_argument("--methods", default="context_tf,cv_kalman",
                   help="comma list from context_tf,vanilla_tf,cv_kalman,oracle")
    p.add_argument("--allow-same-dataset", action="store_true",
                   help="waive the held-out-dataset protocol check")
    p.add_argument("--self-test-oracle", action="store_true",
                   help="also score a ground-truth oracle (must come out all-zero)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="dump predictions (and SVG plots) for every window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--root", required=True, help="dataset root to predict on")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--adapter", default="canonical")
    p.add_argument("--plot", action="store_true", help="emit one SVG per window")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
