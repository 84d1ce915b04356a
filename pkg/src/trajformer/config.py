"""Flat key=value run configuration with dotted section prefixes.

Example file::

    data.train_root = runs/synth_train
    window.delta = 10
    model.d_model = 32
    train.epochs = 25
    out_dir = runs/out

Command-line ``--set key=value`` pairs override file values. The full
config is validated (types, invariants, referenced paths) before any
command touches the filesystem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import WindowConfig
from .errors import ConfigError
from .features import PolarGridConfig, SemanticConfig, feature_dim
from .model import ModelConfig
from .training import TrainConfig

_DEFAULTS: dict[str, str] = {
    "data.train_root": "",
    "data.test_root": "",
    "data.adapter": "canonical",
    "window.delta": "10",
    "window.kappa": "20",
    "window.stride": "5",
    "window.rate_hz": "10",
    "grid.threshold_px": "64",
    "grid.radial_bins": "4",
    "grid.angular_bins": "8",
    "grid.type_channels": "3",
    "semantic.k": "16",
    "semantic.d_max_px": "32",
    "model.d_model": "64",
    "model.n_heads": "4",
    "model.n_layers": "3",
    "model.d_ff": "0",
    "model.dropout": "0",
    "train.epochs": "25",
    "train.learning_rate": "1e-3",
    "train.beta1": "0.9",
    "train.beta2": "0.98",
    "train.eps": "1e-9",
    "train.batch_size": "32",
    "train.grad_clip": "",
    "train.val_fraction": "0.1",
    "train.checkpoint_every": "0",
    "eval.horizons": "1,2",
    "eval.at_horizon": "false",
    "eval.pooled_rmse": "true",
    "eval.kalman_process_noise": "0.5",
    "eval.kalman_measurement_noise": "0.1",
    "context.enabled": "true",
    "out_dir": "runs/out",
    "seed": "0",
}


def parse_kv_file(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in _DEFAULTS:
                raise ConfigError(f"{path} line {line_no}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def _to_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {raw!r}") from None


def _to_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {raw!r}") from None


def _to_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


@dataclass
class RunConfig:
    train_root: str
    test_root: str
    adapter: str
    window: WindowConfig
    grid: PolarGridConfig
    semantic: SemanticConfig
    model: ModelConfig
    train: TrainConfig
    horizons_s: list[float]
    at_horizon: bool
    pooled_rmse: bool
    kalman_process_noise: float
    kalman_measurement_noise: float
    context: bool
    out_dir: Path
    seed: int
    checkpoint_every: int
    raw: dict[str, str] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.grid, self.semantic, self.context)


def build_run_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Merge defaults, an optional config file and --set overrides, validate."""
    values = dict(_DEFAULTS)
    if path is not None:
        values.update(parse_kv_file(path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value.strip()

    if values["data.adapter"] not in ("canonical", "dut", "ind"):
        raise ConfigError(f"data.adapter must be canonical/dut/ind, got {values['data.adapter']!r}")

    try:
        window = WindowConfig(
            delta=_to_int(values["window.delta"], "window.delta"),
            kappa=_to_int(values["window.kappa"], "window.kappa"),
            stride=_to_int(values["window.stride"], "window.stride"),
            rate_hz=_to_float(values["window.rate_hz"], "window.rate_hz"),
        )
        grid = PolarGridConfig(
            threshold_px=_to_float(values["grid.threshold_px"], "grid.threshold_px"),
            radial_bins=_to_int(values["grid.radial_bins"], "grid.radial_bins"),
            angular_bins=_to_int(values["grid.angular_bins"], "grid.angular_bins"),
            type_channels=_to_int(values["grid.type_channels"], "grid.type_channels"),
        )
        semantic = SemanticConfig(
            k=_to_int(values["semantic.k"], "semantic.k"),
            d_max_px=_to_float(values["semantic.d_max_px"], "semantic.d_max_px"),
        )
        context = _to_bool(values["context.enabled"], "context.enabled")
        model = ModelConfig(
            feature_dim=feature_dim(grid, semantic, context),
            d_model=_to_int(values["model.d_model"], "model.d_model"),
            n_heads=_to_int(values["model.n_heads"], "model.n_heads"),
            n_layers=_to_int(values["model.n_layers"], "model.n_layers"),
            d_ff=_to_int(values["model.d_ff"], "model.d_ff"),
            dropout=_to_float(values["model.dropout"], "model.dropout"),
        )
        train = TrainConfig(
            epochs=_to_int(values["train.epochs"], "train.epochs"),
            learning_rate=_to_float(values["train.learning_rate"], "train.learning_rate"),
            beta1=_to_float(values["train.beta1"], "train.beta1"),
            beta2=_to_float(values["train.beta2"], "train.beta2"),
            eps=_to_float(values["train.eps"], "train.eps"),
            batch_size=_to_int(values["train.batch_size"], "train.batch_size"),
            seed=_to_int(values["seed"], "seed"),
            grad_clip=(_to_float(values["train.grad_clip"], "train.grad_clip")
                       if values["train.grad_clip"] else None),
            val_fraction=_to_float(values["train.val_fraction"], "train.val_fraction"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    horizons = []
    for token in values["eval.horizons"].split(","):
        token = token.strip()
        if token:
            horizons.append(_to_float(token, "eval.horizons"))
    if not horizons:
        raise ConfigError("eval.horizons must list at least one horizon")

    for key in ("data.train_root", "data.test_root"):
        if values[key] and not Path(values[key]).exists():
            raise ConfigError(f"{key}: path {values[key]!r} does not exist")

    return RunConfig(
        train_root=values["data.train_root"],
        test_root=values["data.test_root"],
        adapter=values["data.adapter"],
        window=window,
        grid=grid,
        semantic=semantic,
        model=model,
        train=train,
        horizons_s=horizons,
        at_horizon=_to_bool(values["eval.at_horizon"], "eval.at_horizon"),
        pooled_rmse=_to_bool(values["eval.pooled_rmse"], "eval.pooled_rmse"),
        kalman_process_noise=_to_float(values["eval.kalman_process_noise"],
                                       "eval.kalman_process_noise"),
        kalman_measurement_noise=_to_float(values["eval.kalman_measurement_noise"],
                                           "eval.kalman_measurement_noise"),
        context=context,
        out_dir=Path(values["out_dir"]),
        seed=_to_int(values["seed"], "seed"),
        checkpoint_every=_to_int(values["train.checkpoint_every"], "train.checkpoint_every"),
        raw=values,
    )
