import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kdlic.data import (
    DataError,
    FormatError,
    ImageRecord,
    decode_ppm,
    load_dir,
    load_ppm,
    random_crop,
    save_dir,
    save_ppm,
    synth_dataset,
)
from kdlic.rng import make_rng
from kdlic.tensor import ContractError


def test_white_2x2():
    px = decode_ppm(b"P6\n2 2\n255\n" + b"\xff" * 12)
    np.testing.assert_array_equal(px / 255.0, np.ones((3, 2, 2)))


def test_maxval_rejected():
    with pytest.raises(FormatError, match="maxval"):
        decode_ppm(b"P6\n2 2\n65535\n" + b"\x00" * 24)


def test_bad_magic_and_short_file():
    with pytest.raises(FormatError) as exc:
        decode_ppm(b"P3\n2 2\n255\n")
    assert exc.value.offset == 0
    with pytest.raises(FormatError, match="short"):
        decode_ppm(b"P6\n2 2\n255\n" + b"\x00" * 5)


@given(st.integers(16, 24), st.integers(16, 24), st.binary(min_size=0, max_size=6).filter(lambda b: b"\n" not in b and b"\r" not in b), st.integers(0, 2**31 - 1))
def test_roundtrip_byte_identical(tmp_path_factory, h, w, comment, seed):
    d = tmp_path_factory.mktemp("ppm")
    body = np.random.default_rng(seed).integers(0, 256, size=h * w * 3, dtype=np.uint8).tobytes()
    buf = b"P6 #" + comment + b"\n" + f"{w}  {h}\n255\n".encode() + body
    (d / "a.ppm").write_bytes(buf)
    rec = load_ppm(d / "a.ppm")
    save_ppm(rec, d / "b.ppm")
    assert (d / "b.ppm").read_bytes() == buf


def test_record_invariants():
    with pytest.raises(DataError):
        ImageRecord("x", np.zeros((3, 8, 32)))
    with pytest.raises(DataError):
        ImageRecord("x", np.full((3, 16, 16), np.nan))
    rec = ImageRecord("x", np.full((3, 16, 16), 1.5))
    assert rec.pixels.max() == 1.0


def test_load_dir_sorted_and_errors(tmp_path):
    with pytest.raises(DataError):
        load_dir(tmp_path / "missing")
    with pytest.raises(DataError):
        load_dir(tmp_path)
    recs = synth_dataset(3, 16, seed=0)
    save_dir(list(reversed(recs)), tmp_path)
    assert [r.id for r in load_dir(tmp_path)] == sorted(r.id for r in recs)


def test_synth_deterministic_and_in_range():
    a, b = synth_dataset(2, 32, seed=3), synth_dataset(2, 32, seed=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.pixels, y.pixels)
        assert x.pixels.min() >= 0 and x.pixels.max() <= 1
    assert not np.array_equal(a[0].pixels, synth_dataset(1, 32, seed=4)[0].pixels)


def test_synth_content_non_degenerate():
    stds = [r.pixels.std() for r in synth_dataset(512, 64, seed=0)]
    assert np.mean(stds) > 0.05


def test_synth_size_contract():
    with pytest.raises(ContractError):
        synth_dataset(1, 40, seed=0)


def test_crop_whole_image_and_bounds():
    rec = synth_dataset(1, 32, seed=1)[0]
    rng = make_rng(0, 1)
    np.testing.assert_array_equal(random_crop(rec, 32, rng), rec.pixels)
    for _ in range(1000):
        assert random_crop(rec, 20, rng).shape == (3, 20, 20)
    with pytest.raises(ContractError):
        random_crop(rec, 33, rng)


def test_crop_deterministic():
    rec = synth_dataset(1, 64, seed=1)[0]
    a = [random_crop(rec, 16, make_rng(9, 1)) for _ in range(2)]
    np.testing.assert_array_equal(a[0], a[1])
