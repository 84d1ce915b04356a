"""Trajectory ingestion: track parsing, resampling and window extraction.

Canonical CSV schema (header required, UTF-8, '.' decimal point):

    scene_id,agent_id,agent_type,t,x_m,y_m,x_px,y_px

Two adapter schemas normalize the drone-recorded datasets into this form:

    dut:  id,frame,label,x_est,y_est,vx_est,vy_est,x_px,y_px   (23.98 FPS)
    ind:  trackId,frame,xCenter,yCenter,xVelocity,yVelocity,class  (25 FPS)

Velocity columns are read and discarded; offsets are recomputed from
positions downstream. The ``ind`` schema carries no pixel coordinates;
they are attached later from the scene's meters_per_pixel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .maps import SceneMap, load_scene_map

AGENT_TYPES = ("pedestrian", "vehicle", "cyclist")

DUT_FPS = 23.98
IND_FPS = 25.0

_IND_CLASS = {
    "pedestrian": "pedestrian",
    "car": "vehicle",
    "truck_bus": "vehicle",
    "bicycle": "cyclist",
}
_DUT_LABEL = {"pedestrian": "pedestrian", "ped": "pedestrian", "vehicle": "vehicle", "car": "vehicle"}

CANONICAL_HEADER = ["scene_id", "agent_id", "agent_type", "t", "x_m", "y_m", "x_px", "y_px"]


@dataclass
class AgentTrack:
    agent_id: str
    agent_type: str
    t: np.ndarray            # (n,) seconds, strictly increasing
    xy_m: np.ndarray         # (n, 2) meters
    xy_px: np.ndarray | None  # (n, 2) pixels, or None until attached

    def __post_init__(self):
        if self.agent_type not in AGENT_TYPES:
            raise DataError(f"unknown agent type {self.agent_type!r} for agent {self.agent_id}")
        self.t = np.asarray(self.t, dtype=np.float64)
        self.xy_m = np.asarray(self.xy_m, dtype=np.float64)
        if self.xy_px is not None:
            self.xy_px = np.asarray(self.xy_px, dtype=np.float64)
        if len(self.t) != len(self.xy_m):
            raise DataError(f"agent {self.agent_id}: {len(self.t)} times vs {len(self.xy_m)} positions")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise DataError(f"agent {self.agent_id}: timestamps not strictly increasing")

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class WindowConfig:
    delta: int          # observed steps
    kappa: int          # predicted steps
    stride: int = 1
    rate_hz: float = 10.0

    def __post_init__(self):
        if self.delta < 2:
            raise ValueError(f"delta must be >= 2, got {self.delta}")
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")


@dataclass
class TrajectoryWindow:
    ego_id: str
    scene_id: str
    start_index: int
    t_obs: np.ndarray     # (delta,)
    obs_m: np.ndarray     # (delta, 2)
    obs_px: np.ndarray    # (delta, 2)
    fut_m: np.ndarray     # (kappa, 2)
    neighbor_refs: list[str] = field(default_factory=list)


# ------------------------------------------------------------- loading

def _parse_float(value: str, path, row_no: int, col: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DataError(f"{path} row {row_no}: bad {col} value {value!r}") from None


def load_tracks(path, adapter: str = "canonical") -> tuple[list[AgentTrack], str]:
    """Parse one tracks file into per-agent tracks plus the scene id.

    Rows must be in strictly increasing time order per agent (interleaving
    of agents is fine).
    """
    if adapter not in ("canonical", "dut", "ind"):
        raise DataError(f"unknown adapter {adapter!r}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"tracks file {path} does not exist")
    rows: dict[str, dict] = {}
    scene_id: str | None = None
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        _check_header(path, adapter, header)
        for row_no, rec in enumerate(reader, start=2):
            if adapter == "canonical":
                sid = rec["scene_id"]
                if scene_id is None:
                    scene_id = sid
                elif sid != scene_id:
                    raise DataError(f"{path} row {row_no}: multiple scene ids ({scene_id!r}, {sid!r})")
                agent_id = rec["agent_id"]
                agent_type = rec["agent_type"]
                if agent_type not in AGENT_TYPES:
                    raise DataError(f"{path} row {row_no}: unknown agent_type {agent_type!r}")
                t = _parse_float(rec["t"], path, row_no, "t")
                xy_m = (_parse_float(rec["x_m"], path, row_no, "x_m"),
                        _parse_float(rec["y_m"], path, row_no, "y_m"))
                xy_px = (_parse_float(rec["x_px"], path, row_no, "x_px"),
                         _parse_float(rec["y_px"], path, row_no, "y_px"))
            elif adapter == "dut":
                agent_id = rec["id"]
                label = rec["label"].strip().lower()
                if label not in _DUT_LABEL:
                    raise DataError(f"{path} row {row_no}: unknown label {rec['label']!r}")
                agent_type = _DUT_LABEL[label]
                t = _parse_float(rec["frame"], path, row_no, "frame") / DUT_FPS
                xy_m = (_parse_float(rec["x_est"], path, row_no, "x_est"),
                        _parse_float(rec["y_est"], path, row_no, "y_est"))
                xy_px = (_parse_float(rec["x_px"], path, row_no, "x_px"),
                         _parse_float(rec["y_px"], path, row_no, "y_px"))
            else:  # ind
                agent_id = rec["trackId"]
                cls = rec["class"].strip().lower()
                if cls not in _IND_CLASS:
                    raise DataError(f"{path} row {row_no}: unknown class {rec['class']!r}")
                agent_type = _IND_CLASS[cls]
                t = _parse_float(rec["frame"], path, row_no, "frame") / IND_FPS
                xy_m = (_parse_float(rec["xCenter"], path, row_no, "xCenter"),
                        _parse_float(rec["yCenter"], path, row_no, "yCenter"))
                xy_px = None

            bucket = rows.setdefault(
                agent_id, {"type": agent_type, "t": [], "m": [], "px": [], "last_row": None}
            )
            if bucket["type"] != agent_type:
                raise DataError(f"{path} row {row_no}: agent {agent_id} changes type")
            if bucket["t"] and t <= bucket["t"][-1]:
                raise DataError(
                    f"{path} row {row_no}: non-monotone timestamp for agent {agent_id} "
                    f"({t} after {bucket['t'][-1]})"
                )
            bucket["t"].append(t)
            bucket["m"].append(xy_m)
            if xy_px is not None:
                bucket["px"].append(xy_px)

    if scene_id is None:
        # canonical carries the scene id in-file; native files take it from the scene dir
        scene_id = "" if adapter == "canonical" else path.parent.name
    tracks = []
    for agent_id, bucket in rows.items():
        px = np.array(bucket["px"]) if bucket["px"] else None
        tracks.append(AgentTrack(agent_id, bucket["type"], np.array(bucket["t"]),
                                 np.array(bucket["m"]), px))
    return tracks, scene_id


def _check_header(path, adapter: str, header: list[str]) -> None:
    required = {
        "canonical": CANONICAL_HEADER,
        "dut": ["id", "frame", "label", "x_est", "y_est", "vx_est", "vy_est", "x_px", "y_px"],
        "ind": ["trackId", "frame", "xCenter", "yCenter", "xVelocity", "yVelocity", "class"],
    }[adapter]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing} for adapter {adapter!r}")


def write_tracks(path, tracks: list[AgentTrack], scene_id: str) -> None:
    """Write canonical CSV; floats use shortest round-trip formatting."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CANONICAL_HEADER)
        for track in tracks:
            if track.xy_px is None:
                raise DataError(f"agent {track.agent_id}: pixel coordinates not attached")
            for i in range(len(track)):
                writer.writerow(
                    [scene_id, track.agent_id, track.agent_type, repr(float(track.t[i])),
                     repr(float(track.xy_m[i, 0])), repr(float(track.xy_m[i, 1])),
                     repr(float(track.xy_px[i, 0])), repr(float(track.xy_px[i, 1]))]
                )


def attach_pixel_coords(track: AgentTrack, meters_per_pixel: float) -> AgentTrack:
    """Fill pixel coordinates from meters (shared origin, x_px = x_m / mpp)."""
    if track.xy_px is not None:
        return track
    return AgentTrack(track.agent_id, track.agent_type, track.t, track.xy_m,
                      track.xy_m / meters_per_pixel)


def validate_pixel_consistency(track: AgentTrack, meters_per_pixel: float, tol: float = 1e-6) -> None:
    if track.xy_px is None:
        return
    err = np.max(np.abs(track.xy_m - track.xy_px * meters_per_pixel)) if len(track) else 0.0
    if err > tol:
        raise DataError(
            f"agent {track.agent_id}: meter/pixel coordinates disagree by {err:.3g} m "
            f"at meters_per_pixel={meters_per_pixel}"
        )


# ---------------------------------------------------------- resampling

def resample(track: AgentTrack, rate_hz: float, align_global: bool = False) -> AgentTrack:
    """Resample onto a uniform 1/rate grid covering the original span.

    Positions are linearly interpolated between bracketing samples; no
    extrapolation. Grid points within 1e-9 s of an original sample reuse
    that sample exactly, so a track already on the grid passes through
    bit-identically. ``align_global`` anchors the grid on multiples of
    1/rate (shared across agents) instead of the track's first timestamp.
    """
    if rate_hz <= 0:
        raise ValueError(f"rate_hz must be positive, got {rate_hz}")
    if len(track) < 2:
        raise DataError(f"agent {track.agent_id}: cannot resample a track with {len(track)} sample(s)")
    if align_global:
        t0 = math.ceil(track.t[0] * rate_hz - 1e-9) / rate_hz
    else:
        t0 = float(track.t[0])
    span = float(track.t[-1]) - t0
    count = int(math.floor(span * rate_hz + 1e-9)) + 1
    if count < 1:
        raise DataError(f"agent {track.agent_id}: no grid points inside track span")
    grid = t0 + np.arange(count) / rate_hz

    # snap to original samples where they coincide with the grid
    idx = np.searchsorted(track.t, grid)
    snap = np.full(count, -1, dtype=np.int64)
    for cand in (np.clip(idx - 1, 0, len(track) - 1), np.clip(idx, 0, len(track) - 1)):
        hit = np.abs(track.t[cand] - grid) <= 1e-9
        snap[hit] = cand[hit]

    new_t = grid.copy()
    new_m = np.empty((count, 2))
    new_px = np.empty((count, 2)) if track.xy_px is not None else None
    free = snap < 0
    if free.any():
        for k in range(2):
            new_m[free, k] = np.interp(grid[free], track.t, track.xy_m[:, k])
            if new_px is not None:
                new_px[free, k] = np.interp(grid[free], track.t, track.xy_px[:, k])
    hit = ~free
    if hit.any():
        new_t[hit] = track.t[snap[hit]]
        new_m[hit] = track.xy_m[snap[hit]]
        if new_px is not None:
            new_px[hit] = track.xy_px[snap[hit]]
    return AgentTrack(track.agent_id, track.agent_type, new_t, new_m, new_px)


# ------------------------------------------------------------- windows

def extract_windows(
    track: AgentTrack,
    cfg: WindowConfig,
    scene_id: str = "",
    scene_tracks: list[AgentTrack] | None = None,
) -> list[TrajectoryWindow]:
    """All stride-aligned (delta, kappa) slices of a pedestrian track.

    Non-pedestrian egos and too-short tracks yield an empty list.
    ``scene_tracks`` supplies the co-present agents recorded as
    neighbor_refs (any agent with a sample inside the observed interval).
    """
    if track.agent_type != "pedestrian":
        return []
    total = cfg.delta + cfg.kappa
    if len(track) < total:
        return []
    dt = np.diff(track.t)
    if np.any(np.abs(dt - 1.0 / cfg.rate_hz) > 1e-6):
        raise ValueError(f"agent {track.agent_id}: track is not resampled to {cfg.rate_hz} Hz")
    if track.xy_px is None:
        raise DataError(f"agent {track.agent_id}: pixel coordinates required for windows")
    windows = []
    for start in range(0, len(track) - total + 1, cfg.stride):
        obs = slice(start, start + cfg.delta)
        fut = slice(start + cfg.delta, start + total)
        t_obs = track.t[obs]
        refs = []
        if scene_tracks:
            lo, hi = t_obs[0] - 1e-9, t_obs[-1] + 1e-9
            for other in scene_tracks:
                if other.agent_id == track.agent_id:
                    continue
                if other.t[-1] >= lo and other.t[0] <= hi:
                    refs.append(other.agent_id)
        windows.append(
            TrajectoryWindow(
                ego_id=track.agent_id,
                scene_id=scene_id,
                start_index=start,
                t_obs=t_obs.copy(),
                obs_m=track.xy_m[obs].copy(),
                obs_px=track.xy_px[obs].copy(),
                fut_m=track.xy_m[fut].copy(),
                neighbor_refs=refs,
            )
        )
    return windows


def cross_dataset_split(datasets: list[str]) -> list[tuple[str, str]]:
    """Every ordered (train, test) pair of distinct dataset names."""
    if len(datasets) < 2:
        raise ValueError(f"cross-dataset protocol needs >= 2 datasets, got {len(datasets)}")
    return [(a, b) for a in datasets for b in datasets if a != b]


# ---------------------------------------------------------- scene dirs

@dataclass
class Scene:
    scene_map: SceneMap
    tracks: list[AgentTrack]
    meta: dict


def parse_scene_meta(path) -> dict:
    if not Path(path).is_file():
        raise DataError(f"scene metadata file {path} does not exist")
    meta = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path} line {line_no}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    for key in ("scene_id", "meters_per_pixel", "label_map"):
        if key not in meta:
            raise DataError(f"{path}: missing key {key!r}")
    return meta


def load_scene_dir(scene_dir, adapter: str = "canonical") -> Scene:
    """Load one scene directory: scene.meta + label map + tracks file."""
    scene_dir = Path(scene_dir)
    meta = parse_scene_meta(scene_dir / "scene.meta")
    mpp = float(meta["meters_per_pixel"])
    if mpp <= 0:
        raise DataError(f"{scene_dir}: meters_per_pixel must be positive, got {mpp}")
    scene_map = load_scene_map(scene_dir / meta["label_map"], mpp, scene_id=meta["scene_id"])
    tracks_path = scene_dir / meta.get("tracks", "tracks.csv")
    tracks, file_scene_id = load_tracks(tracks_path, adapter)
    if adapter == "canonical" and file_scene_id and file_scene_id != meta["scene_id"]:
        raise DataError(
            f"{tracks_path}: scene id {file_scene_id!r} does not match meta {meta['scene_id']!r}"
        )
    tracks = [attach_pixel_coords(tr, mpp) for tr in tracks]
    for tr in tracks:
        validate_pixel_consistency(tr, mpp)
    return Scene(scene_map=scene_map, tracks=tracks, meta=meta)


def load_dataset_root(root, adapter: str = "canonical") -> list[Scene]:
    """Load every scene subdirectory (sorted by name) under a dataset root."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    scenes = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / "scene.meta").exists():
            scenes.append(load_scene_dir(child, adapter))
    return scenes
