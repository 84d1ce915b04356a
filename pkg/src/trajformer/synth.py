"""Deterministic synthetic scenes: desk-scale stand-ins for drone recordings.

Every scenario produces pedestrian tracks on the exact 1/rate grid plus a
procedural label map; some add scripted vehicle/cyclist agents. The
``obstacle`` scenario is built so that context carries real signal: a
parked vehicle sits just off the walking line (side alternating per scene)
and pedestrians swerve around it on the free side, so the swerve's timing
and direction are readable from the interaction grid but not from the
observed offsets alone.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import AgentTrack, Scene, write_tracks
from .errors import ConfigError
from .maps import LABEL_INDEX, SceneMap, write_pgm

SCENARIOS = ("linear", "turn", "stop_go", "obstacle", "crossing")

MPP = 0.2  # meters per pixel for all synthetic maps


def _blank(width_m: float, height_m: float, fill: str) -> np.ndarray:
    return np.full((int(round(height_m / MPP)), int(round(width_m / MPP))),
                   LABEL_INDEX[fill], dtype=np.uint8)


def _paint(labels: np.ndarray, x0: float, x1: float, y0: float, y1: float, label: str) -> None:
    h, w = labels.shape
    c0, c1 = max(0, int(np.floor(x0 / MPP))), min(w, int(np.ceil(x1 / MPP)))
    r0, r1 = max(0, int(np.floor(y0 / MPP))), min(h, int(np.ceil(y1 / MPP)))
    labels[r0:r1, c0:c1] = LABEL_INDEX[label]


def _track(agent_id: str, agent_type: str, t: np.ndarray, xy_m: np.ndarray) -> AgentTrack:
    return AgentTrack(agent_id, agent_type, t, xy_m, xy_m / MPP)


def _grid(steps: int, rate_hz: float) -> np.ndarray:
    return np.arange(steps) / rate_hz


def _walk_polyline(waypoints: np.ndarray, speed: float, t: np.ndarray) -> np.ndarray:
    """Constant-speed positions along a polyline, clamped at its end."""
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.minimum(speed * t, cum[-1])
    out = np.empty((len(t), 2))
    for k in range(2):
        out[:, k] = np.interp(s, cum, waypoints[:, k])
    return out


def _linear_scene(scene_id: str, n: int, rng: np.random.Generator, rate_hz: float) -> Scene:
    labels = _blank(48.0, 20.0, "road")
    _paint(labels, 0.0, 48.0, 0.0, 1.0, "vegetation")
    _paint(labels, 0.0, 48.0, 19.0, 20.0, "vegetation")
    steps = 160
    t = _grid(steps, rate_hz)
    tracks = []
    for j in range(n):
        start = np.array([1.0 + rng.uniform(0, 2.0), 4.0 + 12.0 * (j + 0.5) / n])
        speed = rng.uniform(1.0, 1.5)
        heading = rng.uniform(-0.15, 0.15)
        v = speed * np.array([np.cos(heading), np.sin(heading)])
        tracks.append(_track(f"ped{j}", "pedestrian", t, start + v * t[:, None]))
    return _make_scene(scene_id, labels, tracks)


def _turn_scene(scene_id: str, n: int, rng: np.random.Generator, rate_hz: float) -> Scene:
    labels = _blank(40.0, 40.0, "road")
    steps = 160
    t = _grid(steps, rate_hz)
    dt = 1.0 / rate_hz
    tracks = []
    for j in range(n):
        speed = rng.uniform(1.0, 1.4)
        theta0 = rng.uniform(-0.3, 0.3)
        total_turn = rng.choice([-1.0, 1.0]) * rng.uniform(0.8, 1.4)
        start = np.array([3.0 + rng.uniform(0, 2.0), 8.0 + rng.uniform(0, 8.0)])
        # heading constant, then a monotone ramp over the middle third, then constant
        ramp = np.clip((np.arange(steps) - steps / 3) / (steps / 3), 0.0, 1.0)
        theta = theta0 + total_turn * ramp
        step_vec = speed * dt * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        xy = start + np.concatenate([np.zeros((1, 2)), np.cumsum(step_vec[:-1], axis=0)])
        tracks.append(_track(f"ped{j}", "pedestrian", t, xy))
    return _make_scene(scene_id, labels, tracks)


def _stop_go_scene(scene_id: str, n: int, rng: np.random.Generator, rate_hz: float) -> Scene:
    labels = _blank(48.0, 16.0, "sidewalk")
    steps = 200
    t = _grid(steps, rate_hz)
    dt = 1.0 / rate_hz
    tracks = []
    for j in range(n):
        speed = rng.uniform(1.0, 1.4)
        stop_at = int(rng.uniform(0.3, 0.5) * steps)
        stop_len = int(rng.uniform(1.5, 3.0) * rate_hz)
        start = np.array([1.5 + rng.uniform(0, 1.5), 3.0 + 10.0 * (j + 0.5) / n])
        moving = np.ones(steps - 1)
        moving[stop_at : stop_at + stop_len] = 0.0
        step_vec = np.stack([speed * dt * moving, np.zeros(steps - 1)], axis=1)
        xy = start + np.concatenate([np.zeros((1, 2)), np.cumsum(step_vec, axis=0)])
        tracks.append(_track(f"ped{j}", "pedestrian", t, xy))
    return _make_scene(scene_id, labels, tracks)


# obstacle geometry shared with tests
OBSTACLE_HALF = 1.2        # half-extent of the parked-vehicle square, meters
SWERVE_OFFSET = 0.8        # obstacle centre offset from the walking line
SWERVE_AMPLITUDE = 2.2     # lateral displacement of the avoidance bump
SWERVE_FAR = 4.5           # bump starts this far before the obstacle
SWERVE_NEAR = 1.5          # bump is fully developed this close to it


def _swerve_bump(x: np.ndarray, x_obs: float) -> np.ndarray:
    up = np.clip((x - (x_obs - SWERVE_FAR)) / (SWERVE_FAR - SWERVE_NEAR), 0.0, 1.0)
    down = np.clip(((x_obs + SWERVE_FAR) - x) / (SWERVE_FAR - SWERVE_NEAR), 0.0, 1.0)
    s = np.minimum(up, down)
    return 0.5 * (1.0 - np.cos(np.pi * s))


SWERVE_REACH = 16.0  # walk this far before and after the obstacle (> grid range)


def _obstacle_scene(scene_id: str, n: int, rng: np.random.Generator, rate_hz: float,
                    scene_index: int) -> Scene:
    labels = _blank(42.0, 20.0, "road")
    _paint(labels, 0.0, 42.0, 0.0, 1.0, "vegetation")
    _paint(labels, 0.0, 42.0, 19.0, 20.0, "vegetation")
    y0 = 10.0 + rng.uniform(-1.0, 1.0)
    x_obs = rng.uniform(20.0, 24.0)
    side = 1.0 if scene_index % 2 == 0 else -1.0
    y_c = y0 + side * SWERVE_OFFSET
    _paint(labels, x_obs - OBSTACLE_HALF, x_obs + OBSTACLE_HALF,
           y_c - OBSTACLE_HALF, y_c + OBSTACLE_HALF, "parked_vehicle")

    # one speed per scene and a walk spanning the full sensing range on both
    # sides of the obstacle: co-walking pedestrians keep a fixed relative
    # geometry and every reachable grid state occurs in every scene, so
    # train and test feature distributions share support
    speed = 1.25 * rng.uniform(0.92, 1.08)
    x_jitter = rng.uniform(0.0, 0.6)
    stagger = 1.7 * (n - 1)
    steps = int(np.ceil((2 * SWERVE_REACH + stagger) / speed * rate_hz)) + 1
    t = _grid(steps, rate_hz)
    tracks = []
    for j in range(n):
        x_start = max(x_obs - SWERVE_REACH - 1.7 * j - x_jitter, 0.2)
        x = x_start + speed * t
        y = y0 - side * SWERVE_AMPLITUDE * _swerve_bump(x, x_obs)
        tracks.append(_track(f"ped{j}", "pedestrian", t, np.stack([x, y], axis=1)))
    parked = np.tile(np.array([x_obs, y_c]), (steps, 1))
    tracks.append(_track("parked0", "vehicle", t, parked))
    scene = _make_scene(scene_id, labels, tracks)
    scene.meta["obstacle"] = f"{x_obs},{y_c},{OBSTACLE_HALF}"
    return scene


def _crossing_scene(scene_id: str, n: int, rng: np.random.Generator, rate_hz: float) -> Scene:
    labels = _blank(40.0, 30.0, "none")
    _paint(labels, 0.0, 40.0, 12.0, 18.0, "road")
    _paint(labels, 0.0, 40.0, 9.0, 12.0, "sidewalk")
    _paint(labels, 0.0, 40.0, 18.0, 21.0, "sidewalk")
    _paint(labels, 0.0, 40.0, 0.0, 9.0, "vegetation")
    _paint(labels, 0.0, 40.0, 21.0, 30.0, "vegetation")
    _paint(labels, 18.0, 22.0, 12.0, 18.0, "zebra_crossing")
    steps = 220
    t = _grid(steps, rate_hz)
    tracks = []
    for j in range(n):
        speed = rng.uniform(1.0, 1.4)
        x_start = 2.0 + rng.uniform(0.0, 4.0) + 1.5 * j
        y_low = 10.0 + rng.uniform(0.0, 1.0)
        y_high = 19.0 + rng.uniform(0.0, 1.0)
        x_cross = 19.0 + rng.uniform(0.0, 2.0)
        waypoints = np.array([
            [x_start, y_low], [x_cross, y_low], [x_cross, y_high], [38.0, y_high],
        ])
        tracks.append(_track(f"ped{j}", "pedestrian", t, _walk_polyline(waypoints, speed, t)))
    # through traffic on the road
    vx = rng.uniform(6.0, 9.0)
    car = np.stack([-4.0 + vx * t, np.full(steps, 14.0)], axis=1)
    tracks.append(_track("veh0", "vehicle", t, car))
    bike = np.stack([42.0 - 4.0 * t, np.full(steps, 16.5)], axis=1)
    tracks.append(_track("cyc0", "cyclist", t, bike))
    return _make_scene(scene_id, labels, tracks)


def _make_scene(scene_id: str, labels: np.ndarray, tracks: list[AgentTrack]) -> Scene:
    scene_map = SceneMap(scene_id, labels, MPP)
    meta = {"scene_id": scene_id, "meters_per_pixel": repr(MPP), "label_map": "map.pgm"}
    return Scene(scene_map=scene_map, tracks=tracks, meta=meta)


def generate_scenes(scenario: str, n_tracks: int, seed: int, n_scenes: int = 1,
                    rate_hz: float = 10.0) -> list[Scene]:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; valid: {', '.join(SCENARIOS)}")
    if n_tracks < 1:
        raise ConfigError(f"n_tracks must be >= 1, got {n_tracks}")
    scenes = []
    for idx in range(n_scenes):
        rng = np.random.default_rng([seed, idx])
        scene_id = f"{scenario}_s{seed}_{idx:02d}"
        if scenario == "linear":
            scenes.append(_linear_scene(scene_id, n_tracks, rng, rate_hz))
        elif scenario == "turn":
            scenes.append(_turn_scene(scene_id, n_tracks, rng, rate_hz))
        elif scenario == "stop_go":
            scenes.append(_stop_go_scene(scene_id, n_tracks, rng, rate_hz))
        elif scenario == "obstacle":
            scenes.append(_obstacle_scene(scene_id, n_tracks, rng, rate_hz, idx))
        else:
            scenes.append(_crossing_scene(scene_id, n_tracks, rng, rate_hz))
    return scenes


def write_dataset(root, scenes: list[Scene]) -> Path:
    """Materialize scenes as scene directories under a dataset root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        scene_dir = root / scene.scene_map.scene_id
        scene_dir.mkdir(parents=True, exist_ok=True)
        write_pgm(scene_dir / "map.pgm", scene.scene_map.labels)
        lines = [f"{k}={v}" for k, v in sorted(scene.meta.items())]
        (scene_dir / "scene.meta").write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_tracks(scene_dir / "tracks.csv", scene.tracks, scene.scene_map.scene_id)
    return root


def synth_dataset(root, scenario: str, n_tracks: int, seed: int, n_scenes: int = 1,
                  rate_hz: float = 10.0) -> Path:
    return write_dataset(root, generate_scenes(scenario, n_tracks, seed, n_scenes, rate_hz))
