import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stmfa import data as D
from stmfa.errors import ContractError, FormatError
from stmfa.wavelet import dwt_temporal, multilevel_temporal


def square(speed, direction=(0, 1), start=(4.0, 4.0), size=4.0, intensity=0.8):
    return D.SceneObject((size, size), intensity, speed, direction, start)


def test_static_object_static_clip():
    spec = D.SceneSpec((16, 16), (square(0.0),), 8, 0.1)
    clip = D.render_clip(spec)
    assert np.all(clip == clip[0])
    for lvl in multilevel_temporal(clip).levels:
        assert np.all(lvl["high"] == 0.0)


def test_periodic_wrap_returns_to_start():
    spec = D.SceneSpec((8, 8), (square(1.0, (1, 0), (2.0, 3.0), 3.0),), 9)
    clip = D.render_clip(spec)
    np.testing.assert_array_equal(clip[8], clip[0])
    assert not np.array_equal(clip[4], clip[0])


def test_area_coverage_matches_bilinear():
    # a unit-aligned square moved by a fractional offset equals the bilinear blend of its two integer placements
    frac = D.SceneSpec((12, 12), (D.SceneObject((3.0, 3.0), 1.0, 0.25, (0, 1), (4.0, 4.0)),), 2)
    at4 = D.SceneSpec((12, 12), (D.SceneObject((3.0, 3.0), 1.0, 0.0, (0, 1), (4.0, 4.0)),), 1)
    at5 = D.SceneSpec((12, 12), (D.SceneObject((3.0, 3.0), 1.0, 0.0, (0, 1), (4.0, 5.0)),), 1)
    blend = 0.75 * D.render_clip(at4)[0] + 0.25 * D.render_clip(at5)[0]
    np.testing.assert_allclose(D.render_clip(frac)[1], blend, atol=1e-15)


def test_render_rejects_oversized_object():
    with pytest.raises(ContractError):
        D.render_clip(D.SceneSpec((8, 8), (square(1.0, size=9.0),), 4))


def test_render_deterministic_and_in_range():
    spec = D.sample_scene("random", 3)
    a, b = D.render_clip(spec), D.render_clip(spec)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_two_speed_preset_shape():
    spec = D.sample_scene("two-speed", 11)
    speeds = sorted(o.speed for o in spec.objects)
    assert speeds == [1.0, 3.0]
    clip = D.render_clip(spec)
    assert clip.shape == (16, 32, 32, 1)


def test_two_speed_energy_single_clip():
    spec = D.sample_scene("two-speed", 5)
    clip = D.render_clip(spec)
    energy = D.level1_band_energy(spec, clip)
    slow, fast = (0, 1) if spec.objects[0].speed < spec.objects[1].speed else (1, 0)
    valid = (energy[:, slow] > 0) & (energy[:, fast] > 0)
    assert np.all(energy[valid, fast] > energy[valid, slow])
    # mean |high| comparison over the full occupancy masks
    _, high = dwt_temporal(clip)
    occ = [D.object_occupancy(spec, i) for i in range(2)]
    mean_abs = [np.mean(np.abs(high[..., 0])[o[0::2] | o[1::2]]) for o in occ]
    assert mean_abs[fast] > mean_abs[slow]


def test_unknown_preset():
    with pytest.raises(ContractError):
        D.sample_scene("bouncing", 0)


def test_make_dataset_split_and_determinism():
    a = D.make_dataset(11, "two-speed", 4)
    b = D.make_dataset(11, "two-speed", 4)
    assert (len(a.train), len(a.val)) == (10, 1)
    assert all(x.clip.tobytes() == y.clip.tobytes() for x, y in zip(a.records, b.records))
    for rec in a.records:
        t, h, w, c = rec.clip.shape
        assert t >= 1 and h >= 2 and w >= 2 and c >= 1
        assert rec.clip.min() >= 0 and rec.clip.max() <= 1
    with pytest.raises(ContractError):
        D.make_dataset(1)


def test_write_dataset_manifest(tmp_path):
    ds = D.make_dataset(5, "two-speed", 1)
    D.write_dataset(ds, tmp_path / "a")
    D.write_dataset(D.make_dataset(5, "two-speed", 1), tmp_path / "b")
    assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()
    lines = (tmp_path / "a/manifest.csv").read_text().splitlines()
    assert lines[0] == "path,split,seed,obj0_vy,obj0_vx,obj1_vy,obj1_vx"
    assert len(lines) == 6
    loaded = D.load_dataset(tmp_path / "a")
    assert len(loaded["train"]) == 5 and len(loaded["val"]) == 0
    np.testing.assert_array_equal(loaded["train"][0], ds.train[0].clip)


def test_load_dataset_missing(tmp_path):
    with pytest.raises(FormatError):
        D.load_dataset(tmp_path)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_stmf_roundtrip(tmp_path, rng, dtype):
    clip = rng.uniform(size=(3, 4, 5, 2)).astype(dtype)
    D.write_stmf(tmp_path / "c.stmf", clip, dtype)
    back = D.read_stmf(tmp_path / "c.stmf")
    assert back.dtype == dtype and back.tobytes() == clip.tobytes()
    raw = (tmp_path / "c.stmf").read_bytes()
    assert raw[:4] == b"STMF" and len(raw) == 23 + clip.size * np.dtype(dtype).itemsize


def test_stmf_errors(tmp_path, rng):
    D.write_stmf(tmp_path / "c.stmf", rng.uniform(size=(2, 2, 2, 1)))
    raw = (tmp_path / "c.stmf").read_bytes()
    (tmp_path / "t.stmf").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="expected 87 bytes.*got 82"):
        D.read_stmf(tmp_path / "t.stmf")
    (tmp_path / "m.stmf").write_bytes(b"STMX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        D.read_stmf(tmp_path / "m.stmf")
    (tmp_path / "v.stmf").write_bytes(raw[:4] + b"\x09\x00" + raw[6:])
    with pytest.raises(FormatError, match="version"):
        D.read_stmf(tmp_path / "v.stmf")
    with pytest.raises(ContractError):
        D.write_stmf(tmp_path / "x.stmf", np.zeros((2, 2)))


def test_pgm_constant_half(tmp_path):
    D.export_pgm(np.full((3, 4), 0.5), tmp_path / "h.pgm")
    q = D.read_pgm(tmp_path / "h.pgm")
    assert q.shape == (3, 4) and np.all(q == 128)


def test_pgm_normalize_and_sidecar(tmp_path, rng):
    band = rng.normal(size=(5, 6))
    lo, hi = D.export_pgm(band, tmp_path / "b.pgm", normalize=True, sidecar=tmp_path / "n.csv")
    q = D.read_pgm(tmp_path / "b.pgm")
    assert q.min() == 0 and q.max() == 255
    assert (lo, hi) == (band.min(), band.max())
    rows = (tmp_path / "n.csv").read_text().splitlines()
    assert rows[0] == "file,min,max" and rows[1].startswith("b.pgm,")
    assert np.max(np.abs(D.dequantize(q, lo, hi) - band)) <= 0.5 / 255 * (hi - lo) + 1e-12


def test_pgm_multichannel_rejected(tmp_path):
    with pytest.raises(ContractError):
        D.export_pgm(np.zeros((4, 4, 3)), tmp_path / "x.pgm")


@given(st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_quantize_roundtrip_bound(vals):
    v = np.array(vals)
    assert np.max(np.abs(D.dequantize(D.quantize(v)) - v)) <= 1 / 255 + 1e-12


@given(st.integers(0, 2**31 - 1))
def test_scene_determinism_property(seed):
    spec = D.sample_scene("two-speed", seed, canvas=(16, 16), frames=4)
    assert D.render_clip(spec).tobytes() == D.render_clip(spec).tobytes()
