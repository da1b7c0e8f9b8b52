import numpy as np
import pytest

from dic.config.model_config import STAGE_IDS
from dic.errors import ShapeError
from dic.services.analyzer import stage_embedding_overhead
from dic.services.conditioning import apply_label_drop, stage_condition, timestep_embedding
from dic.services.gradcheck import perturb
from dic.services.model import build_model
from tests.conftest import tiny_config


def test_timestep_embedding_layout():
    emb = timestep_embedding(np.array([0, 5]), 8)
    assert emb.shape == (2, 8)
    np.testing.assert_array_equal(emb[0, 0::2], 0.0)
    np.testing.assert_array_equal(emb[0, 1::2], 1.0)
    assert emb[1, 0] == pytest.approx(np.sin(5.0))
    assert emb[1, 3] == pytest.approx(np.cos(5.0 / 10000 ** (2 / 8)))


def test_timestep_embedding_rejects_odd_dim():
    with pytest.raises(ShapeError):
        timestep_embedding(np.array([1]), 7)


def test_label_drop_rate_and_null_index():
    rng = np.random.default_rng(0)
    y = np.zeros(20000, dtype=np.int64)
    dropped = apply_label_drop(y, 0.1, rng, null_index=5)
    assert set(np.unique(dropped)) == {0, 5}
    assert abs((dropped == 5).mean() - 0.1) < 0.01


def test_label_drop_zero_is_identity_copy():
    y = np.array([1, 2, 3])
    out = apply_label_drop(y, 0.0, np.random.default_rng(0), null_index=9)
    np.testing.assert_array_equal(out, y)
    assert out is not y


def test_label_drop_probability_range():
    with pytest.raises(ShapeError):
        apply_label_drop(np.array([0]), 1.0, np.random.default_rng(0), null_index=1)


def test_stage_tables_are_disjoint():
    config = tiny_config()
    model = build_model(config, dtype="float64")
    perturb(model, seed=0)
    t, y = np.array([3]), np.array([1])
    before = stage_condition(model.cond, t, y, "enc1", 0)
    for name, param in model.parameters().items():
        if name.startswith("cond.enc0."):
            param.data = param.data + 1.0
    after = stage_condition(model.cond, t, y, "enc1", 0)
    np.testing.assert_array_equal(before.scale.data, after.scale.data)
    np.testing.assert_array_equal(before.gate.data, after.gate.data)
    changed = stage_condition(model.cond, t, y, "enc0", 0)
    assert not np.array_equal(changed.scale.data, stage_condition(model.cond, t, y, "dec0", 0).scale.data)


def test_stage_condition_widths_follow_stage_channels():
    config = tiny_config()
    model = build_model(config)
    for stage in config.stage_plan():
        mod = stage_condition(model.cond, 1, 0, stage.stage_id, 0)
        assert mod.scale.shape == (1, stage.channels)
        assert mod.gate.shape == (1, stage.channels)


def test_no_gate_without_gating():
    model = build_model(tiny_config(gating=False))
    assert stage_condition(model.cond, 1, 0, "mid", 0).gate is None
    assert not any(name.endswith(".gate.weight") for name in model.parameters())


def test_fresh_modulation_is_zero():
    model = build_model(tiny_config())
    mod = stage_condition(model.cond, 4, 1, "dec1", 0)
    for part in (mod.scale, mod.shift, mod.gate):
        assert np.all(part.data == 0.0)


def test_stage_condition_errors():
    model = build_model(tiny_config())
    with pytest.raises(ShapeError):
        stage_condition(model.cond, 1, 0, "bottleneck", 0)
    with pytest.raises(ShapeError):
        stage_condition(model.cond, 1, 0, "mid", 5)
    with pytest.raises(ShapeError):
        stage_condition(model.cond, 1, 3, "mid", 0)


def test_shared_mode_projects_one_embedding():
    model = build_model(tiny_config(stage_specific_embeddings=False))
    names = set(model.parameters())
    assert "cond.shared.time_fc1.weight" in names
    for sid in STAGE_IDS:
        assert f"cond.{sid}.proj.weight" in names
        assert f"cond.{sid}.time_fc1.weight" not in names


def test_overhead_matches_built_models():
    config = tiny_config()
    specific = build_model(config.replace(stage_specific_embeddings=True)).num_params
    shared = build_model(config.replace(stage_specific_embeddings=False)).num_params
    assert stage_embedding_overhead(config)[0] == specific - shared
