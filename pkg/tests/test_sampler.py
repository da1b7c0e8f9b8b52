import asyncio
import io

import numpy as np
from PIL import Image

from dic.services.checkpoint import save_model
from dic.services.gradcheck import perturb
from dic.services.model import build_model
from dic.services.sampler import SampleService, encode_ppm, to_uint8
from tests.conftest import tiny_run


def test_to_uint8_maps_unit_range_linearly():
    image = np.array([[[-1.0, 0.0, 1.0, 3.0]]])
    out = to_uint8(image)
    assert out.shape == (1, 4, 3)
    np.testing.assert_array_equal(out[0, :, 0], [0, 128, 255, 255])
    np.testing.assert_array_equal(out[..., 0], out[..., 2])


def test_to_uint8_keeps_first_three_channels():
    image = np.stack([np.full((2, 2), v) for v in (-1.0, 0.0, 1.0, 0.5)])
    out = to_uint8(image)
    assert out.shape == (2, 2, 3)
    np.testing.assert_array_equal(out[0, 0], [0, 128, 255])


def test_ppm_is_binary_p6():
    payload = encode_ppm(np.zeros((3, 4, 5)))
    assert payload.startswith(b"P6")
    decoded = Image.open(io.BytesIO(payload))
    assert decoded.size == (5, 4)


def test_write_samples_writes_ppm_and_raw(tmp_path):
    samples = np.random.default_rng(0).uniform(-1, 1, (3, 3, 4, 4)).astype(np.float32)
    paths = asyncio.run(SampleService(concurrency=2).write_samples(samples, tmp_path / "out", prefix="x"))
    assert sorted(p.name for p in paths) == sorted(
        [f"x_{i:03d}.ppm" for i in range(3)] + [f"x_{i:03d}.f32" for i in range(3)]
    )
    raw = np.frombuffer((tmp_path / "out" / "x_001.f32").read_bytes(), dtype="<f4").reshape(3, 4, 4)
    np.testing.assert_array_equal(raw, samples[1])


def test_generate_from_checkpoint(tmp_path):
    run = tiny_run(tmp_path, num_timesteps=4)
    model = build_model(run.model, seed=run.seed, dtype=run.dtype)
    perturb(model, seed=0)
    ckpt = tmp_path / "m.ckpt"
    save_model(ckpt, model, run)
    service = SampleService()
    paths = service.generate(ckpt, class_label=1, cfg=1.5, n=4, out_dir=tmp_path / "samples", progress=False)
    assert len(paths) == 8
    assert sum(p.suffix == ".ppm" for p in paths) == 4
    again = service.generate(ckpt, class_label=1, cfg=1.5, n=4, out_dir=tmp_path / "again", progress=False)
    for a, b in zip(paths, again):
        assert a.read_bytes() == b.read_bytes()
