"""Independent reference implementations used as test oracles.

These are deliberately written from the definitions (explicit loops,
meshgrids, textbook filter equations) rather than sharing any code with
the package.
"""

import numpy as np

AGENT_CHANNEL = {"pedestrian": 0, "vehicle": 1, "cyclist": 2}
N_LABELS = 6


def brute_force_grid(ego, neighbors, cfg):
    """Polar occupancy re-derived with explicit per-neighbor geometry."""
    grid = np.zeros((cfg.radial_bins, cfg.angular_bins, cfg.type_channels))
    for (x, y), kind in neighbors:
        dx, dy = x - ego[0], y - ego[1]
        d = np.hypot(dx, dy)
        if d > cfg.threshold_px:
            continue
        r_bin = min(int(d * cfg.radial_bins / cfg.threshold_px), cfg.radial_bins - 1)
        ang = np.arctan2(dy, dx)
        if ang < 0:
            ang += 2 * np.pi
        a_bin = min(int(ang / (2 * np.pi / cfg.angular_bins)), cfg.angular_bins - 1)
        c = 0 if cfg.type_channels == 1 else AGENT_CHANNEL[kind]
        grid[r_bin, a_bin, c] += 1
    return grid


def brute_force_semantics(pos, scene, cfg):
    """Exhaustive k-NN over every pixel of the map."""
    h, w = scene.labels.shape
    x = min(max(pos[0], 0.0), w - 1.0)
    y = min(max(pos[1], 0.0), h - 1.0)
    cols, rows = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    d2 = (cols - x) ** 2 + (rows - y) ** 2
    flat = d2.reshape(-1)
    keep = np.flatnonzero(flat <= cfg.d_max_px**2)
    hist = np.zeros(N_LABELS)
    if len(keep) == 0:
        hist[0] = 1.0
        return hist
    order = keep[np.lexsort((keep, flat[keep]))][: cfg.k]
    labels = scene.labels.reshape(-1)[order]
    counts = np.bincount(labels, minlength=N_LABELS).astype(float)
    return counts / counts.sum()


def textbook_kalman(observed, kappa, dt, q_std, r_std):
    """Constant-velocity Kalman filter from the textbook equations.

    Joseph-form covariance update, explicit matrix inverse; same seeding
    convention as the package filter (position from the second fix,
    velocity from the first difference).
    """
    observed = np.asarray(observed, dtype=float)
    F = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    H = np.array([[1, 0, 0, 0], [0, 1, 0, 0]], dtype=float)
    q = q_std**2
    Q = np.zeros((4, 4))
    for i, j in ((0, 2), (1, 3)):
        Q[i, i] = q * dt**4 / 4
        Q[i, j] = Q[j, i] = q * dt**3 / 2
        Q[j, j] = q * dt**2
    R = r_std**2 * np.eye(2)
    v0 = (observed[1] - observed[0]) / dt
    x = np.array([observed[1, 0], observed[1, 1], v0[0], v0[1]])
    r = r_std**2
    P = np.diag([r, r, 2 * r / dt**2, 2 * r / dt**2])
    eye = np.eye(4)
    for z in observed[2:]:
        x = F @ x
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ (z - H @ x)
        P = (eye - K @ H) @ P @ (eye - K @ H).T + K @ R @ K.T
    out = np.empty((kappa, 2))
    for i in range(kappa):
        x = F @ x
        out[i] = x[:2]
    return out
