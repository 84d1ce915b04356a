import numpy as np
import pytest

from trajformer.data import WindowConfig, load_dataset_root
from trajformer.errors import DataError
from trajformer.features import PolarGridConfig, SemanticConfig
from trajformer.pipeline import (build_feature_set, load_feature_cache, resample_scene,
                                 save_feature_cache, worker_count)
from trajformer.synth import synth_dataset

WCFG = WindowConfig(delta=6, kappa=8, stride=10)
PG = PolarGridConfig()
SC = SemanticConfig(k=8, d_max_px=6)


@pytest.fixture()
def scenes(tmp_path):
    root = synth_dataset(tmp_path / "ds", "crossing", 2, seed=1, n_scenes=2)
    return [resample_scene(s, WCFG.rate_hz) for s in load_dataset_root(root)]


def test_feature_set_shapes(scenes):
    fset = build_feature_set(scenes, WCFG, PG, SC, resampled=True)
    assert len(fset) > 0
    n = len(fset)
    assert fset.features.shape == (n, WCFG.delta - 1, 2 + PG.n_cells + 6)
    assert fset.target_offsets.shape == (n, WCFG.kappa, 2)
    assert fset.obs_m.shape == (n, WCFG.delta, 2)


def test_target_offsets_bridge_and_reconstruct(scenes):
    # first target offset bridges from the last observed position; the
    # cumulative sum of the targets rebuilds the future exactly
    fset = build_feature_set(scenes, WCFG, PG, SC, resampled=True)
    for i, case in enumerate(fset.cases()):
        offsets = fset.target_offsets[i]
        assert np.allclose(offsets[0], case.fut_m[0] - case.obs_m[-1], atol=1e-12)
        rebuilt = case.last_obs_m + np.cumsum(offsets, axis=0)
        assert np.max(np.abs(rebuilt - case.fut_m)) < 1e-12


def test_cache_roundtrip_and_determinism(tmp_path, scenes):
    fset = build_feature_set(scenes, WCFG, PG, SC, resampled=True)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_feature_cache(p1, fset, WCFG, PG, SC)
    save_feature_cache(p2, fset, WCFG, PG, SC)
    assert p1.read_bytes() == p2.read_bytes()
    loaded, meta = load_feature_cache(p1)
    assert loaded.keys == fset.keys
    assert np.array_equal(loaded.features, fset.features)
    assert meta["window"]["delta"] == WCFG.delta


def test_cache_rejects_other_bundles(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"not a bundle")
    with pytest.raises(DataError):
        load_feature_cache(tmp_path / "junk.bin")


def test_worker_env_parsing(monkeypatch):
    monkeypatch.delenv("TRAJFORMER_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("TRAJFORMER_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("TRAJFORMER_THREADS", "zero")
    with pytest.raises(DataError):
        worker_count()


def test_parallel_features_match_serial(monkeypatch, scenes):
    monkeypatch.delenv("TRAJFORMER_THREADS", raising=False)
    serial = build_feature_set(scenes, WCFG, PG, SC, resampled=True)
    monkeypatch.setenv("TRAJFORMER_THREADS", "3")
    parallel = build_feature_set(scenes, WCFG, PG, SC, resampled=True)
    assert serial.keys == parallel.keys
    assert np.array_equal(serial.features, parallel.features)
