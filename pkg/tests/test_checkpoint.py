import numpy as np
import pytest

from dic.config.run_config import RunConfig
from dic.errors import CheckpointError
from dic.services.checkpoint import decode, encode, load_model, read_checkpoint, save_model, write_checkpoint
from dic.services.gradcheck import perturb
from dic.services.model import build_model
from dic.services.optimizer import EMA, AdamW
from tests.conftest import tiny_config


def make_run(**overrides) -> RunConfig:
    return RunConfig(model=tiny_config(**overrides))


def test_model_round_trip_is_bitwise(tmp_path):
    run = make_run()
    model = build_model(run.model, seed=run.seed, dtype=run.dtype)
    perturb(model, seed=1)
    path = tmp_path / "m.ckpt"
    save_model(path, model, run, step=12)
    loaded, loaded_run, data = load_model(path)
    assert loaded_run == run
    assert data.step == 12
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(loaded.state_dict()[name], value)


def test_optimizer_and_ema_are_stored(tmp_path):
    run = make_run()
    model = build_model(run.model)
    params = model.parameters()
    optimizer = AdamW(params)
    ema = EMA(params, decay=0.5)
    for p in params.values():
        p.grad = np.ones_like(p.data)
    optimizer.step()
    ema.update(params)
    path = tmp_path / "m.ckpt"
    save_model(path, model, run, step=1, optimizer=optimizer, ema=ema)
    data = read_checkpoint(path)
    assert set(data.params()) == set(params)
    assert len(data.group("optim.m/")) == len(params)
    assert len(data.group("ema/")) == len(params)

    ema_model, _, _ = load_model(path, use_ema=True)
    for name, value in ema.shadow.items():
        np.testing.assert_array_equal(ema_model.state_dict()[name], value)


def test_layout_header():
    blob = encode("seed=0\n", {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert blob[:4] == b"DIC1"
    data = decode(blob)
    assert data.text == "seed=0\n"
    np.testing.assert_array_equal(data.tensors["w"], np.arange(6).reshape(2, 3))


def test_scalar_tensor_round_trip():
    data = decode(encode("", {"s": np.array(2.5, dtype=np.float32)}))
    assert data.tensors["s"].shape == ()
    assert float(data.tensors["s"]) == 2.5


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-3],
    lambda b: b + b"\x00",
])
def test_corrupt_files_rejected(mutate):
    blob = encode("a=1\n", {"w": np.ones(3, dtype=np.float32)})
    with pytest.raises(CheckpointError):
        decode(mutate(blob))


def test_missing_file_reports_path(tmp_path):
    path = tmp_path / "absent.ckpt"
    with pytest.raises(CheckpointError) as err:
        read_checkpoint(path)
    assert err.value.path == str(path)
    assert f"path={path}" in err.value.to_line()


def test_unwritable_destination_raises_checkpoint_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    with pytest.raises(CheckpointError):
        write_checkpoint(blocker / "m.ckpt", "", {})


def test_mismatched_parameters_rejected(tmp_path):
    run = make_run()
    path = tmp_path / "m.ckpt"
    save_model(path, build_model(run.model), run)
    other = build_model(tiny_config(stage_depths=(2, 2, 1, 2, 2)))
    with pytest.raises(CheckpointError):
        other.load_state(read_checkpoint(path).params())


def test_failed_replace_leaves_no_temp_file(tmp_path, monkeypatch):
    def refuse(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr("dic.services.checkpoint.os.replace", refuse)
    path = tmp_path / "m.ckpt"
    with pytest.raises(CheckpointError):
        write_checkpoint(path, "seed=0\n", {"w": np.ones(2, dtype=np.float32)})
    assert not path.exists()
    assert list(tmp_path.iterdir()) == []
