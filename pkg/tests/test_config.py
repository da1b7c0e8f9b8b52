import pytest

from dic.config import run_config
from dic.config.model_config import PRESETS, Variant, preset
from dic.config.run_config import RunConfig, from_cli, from_pairs, parse, parse_overrides
from dic.config.settings import Settings
from dic.errors import ConfigError
from tests.conftest import tiny_config


def test_serialize_parse_round_trip():
    run = RunConfig(model=tiny_config(variant=Variant.UNET_DENSE, gating=False), seed=3, dtype="float64")
    assert parse(run.serialize()) == run
    assert parse(RunConfig().serialize()) == RunConfig()


def test_text_format_details():
    text = "# comment\n\nmodel.preset=DiC-S   # trailing comment\nmodel.stage_depths=1,2,3,2,1\noptim.ema=true\n"
    run = parse(text)
    assert run.model.base_channels == 96
    assert run.model.stage_depths == (1, 2, 3, 2, 1)
    assert run.optim.ema is True


def test_preset_pseudo_key_applies_before_other_keys():
    run = from_pairs([("model.preset", "DiC-XL"), ("model.image_size", "16")])
    assert run.model == preset("DiC-XL", image_size=16)
    run = from_pairs([("model.image_size", "16"), ("model.preset", "DiC-B")])
    assert run.model.image_size == 32


def test_unknown_keys_rejected():
    for key in ("model.bogus", "bogus", "optim.lr.extra", "seed.value"):
        with pytest.raises(ConfigError) as err:
            from_pairs([(key, "1")])
        assert err.value.code == "unknown_key"


def test_unknown_preset():
    with pytest.raises(ConfigError) as err:
        from_pairs([("model.preset", "DiC-Z")])
    assert err.value.code == "unknown_value"


def test_type_errors_name_the_field():
    with pytest.raises(ConfigError) as err:
        from_pairs([("model.base_channels", "wide")])
    assert err.value.field == "model.base_channels"


@pytest.mark.parametrize("key, value, field", [
    ("model.groups", "5", "groups"),
    ("model.image_size", "10", "image_size"),
    ("model.label_drop_prob", "1.0", "label_drop_prob"),
    ("model.stage_depths", "1,2,1,1,1", "stage_depths"),
    ("schedule.beta_end", "0.00001", "schedule.beta_start"),
    ("optim.lr", "0", "optim.lr"),
])
def test_invariants_raise_config_error(key, value, field):
    with pytest.raises(ConfigError) as err:
        from_pairs([(key, value)])
    assert err.value.field == field


def test_isotropic_allows_unmirrored_depths():
    assert from_pairs([("model.variant", "Isotropic"), ("model.stage_depths", "1,2,3,4,5")]).model.stage_depths == (1, 2, 3, 4, 5)


def test_syntax_error_points_at_line():
    with pytest.raises(ConfigError) as err:
        parse("seed=1\nnot a pair\n")
    assert err.value.code == "syntax"
    assert err.value.context["line"] == 2


def test_load_with_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.preset=DiC-micro\nseed=4\n", encoding="utf-8")
    run = run_config.load(path, ["seed=9", "optim.batch_size=8"])
    assert run.seed == 9
    assert run.optim.batch_size == 8
    assert from_cli(path, ["seed=9"]).seed == 9
    assert from_cli(None, ["seed=2"]).seed == 2
    with pytest.raises(ConfigError):
        run_config.load(tmp_path / "missing.cfg")


def test_parse_overrides():
    assert parse_overrides(["a.b=1", "c = x y"]) == [("a.b", "1"), ("c", "x y")]


def test_skip_positions():
    sparse = preset("DiC-S")
    assert sparse.skip_positions(6) == [2, 4, 6]
    assert sparse.skip_positions(5) == [2, 4, 5]
    assert sparse.replace(variant=Variant.UNET_DENSE).skip_positions(3) == [1, 2, 3]
    assert sparse.replace(variant=Variant.ISOTROPIC).skip_positions(3) == []


def test_stage_plan_channels_and_resolutions():
    plan = preset("DiC-S").stage_plan()
    assert [s.channels for s in plan] == [96, 192, 384, 192, 96]
    assert [s.resolution for s in plan] == [32, 16, 8, 16, 32]
    iso = preset("DiC-S", variant=Variant.ISOTROPIC).stage_plan()
    assert {s.channels for s in iso} == {96}
    assert {s.resolution for s in iso} == {16}


def test_every_preset_validates():
    for name in PRESETS:
        assert preset(name).num_classes >= 1


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("DIC_WARN_STEP_GFLOPS", "7.5")
    monkeypatch.setenv("DIC_OUTPUT_DIR", "elsewhere")
    settings = Settings()
    assert settings.WARN_STEP_GFLOPS == 7.5
    assert settings.OUTPUT_DIR == "elsewhere"
