import numpy as np
import pytest
from hypothesis import given, settings, HealthCheck, strategies as st

from sarseg.grid import LabelField
from sarseg.io import (FormatError, RunManifest, gray_levels, read_config, read_image, read_label_pgm, read_pgm,
                       read_raw_float, read_samples, write_label_pgm, write_pgm, write_raw_float)


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(2, 255), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))
def test_label_pgm_round_trip(tmp_path, c, h, w, seed):
    lab = np.random.default_rng(seed).integers(1, c + 1, (h, w))
    x = LabelField(lab, c)
    p = tmp_path / "l.pgm"
    write_label_pgm(p, x)
    assert read_label_pgm(p, c) == x


def test_gray_levels():
    assert gray_levels(2).tolist() == [0, 255]
    assert gray_levels(3).tolist() == [0, 128, 255]
    assert len(set(gray_levels(255).tolist())) == 255
    with pytest.raises(ValueError):
        gray_levels(256)


def test_wrong_class_count_rejected(tmp_path):
    p = tmp_path / "l.pgm"
    write_label_pgm(p, LabelField(np.array([[1, 2, 3]]), 3))
    with pytest.raises(FormatError):
        read_label_pgm(p, 2)


def test_pgm_16bit_and_ascii(tmp_path):
    a = np.array([[0, 300], [65535, 7]])
    write_pgm(tmp_path / "a.pgm", a)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), a)
    (tmp_path / "b.pgm").write_text("P2\n# comment\n3 1\n# another\n10\n1 2 10\n")
    assert read_pgm(tmp_path / "b.pgm").tolist() == [[1, 2, 10]]
    (tmp_path / "c.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "c.pgm")
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "d.pgm", np.array([[1.5]]))


def test_raw_float_round_trip(tmp_path):
    v = np.random.default_rng(0).gamma(2.0, 3.0, (5, 7)).astype(np.float32)
    write_raw_float(tmp_path / "v.f32", v)
    assert np.array_equal(read_raw_float(tmp_path / "v.f32"), v.astype(np.float64))
    g = read_image(tmp_path / "v.f32")
    assert g.shape == (5, 7)
    (tmp_path / "bad.f32").write_bytes(b"F32 5 7\n" + b"\x00" * 10)
    with pytest.raises(FormatError):
        read_image(tmp_path / "bad.f32")
    (tmp_path / "junk").write_bytes(b"hello")
    with pytest.raises(FormatError):
        read_image(tmp_path / "junk")


def test_negative_intensity_is_format_error(tmp_path):
    write_raw_float(tmp_path / "n.f32", np.array([[1.0, -2.0]]))
    with pytest.raises(FormatError):
        read_image(tmp_path / "n.f32")


def test_read_samples(tmp_path):
    (tmp_path / "s.txt").write_text("1.5, 2\n3 4.25\n")
    assert read_samples(tmp_path / "s.txt").tolist() == [1.5, 2.0, 3.0, 4.25]
    (tmp_path / "e.txt").write_text("  \n")
    with pytest.raises(FormatError):
        read_samples(tmp_path / "e.txt")
    (tmp_path / "x.txt").write_text("1 two 3")
    with pytest.raises(FormatError):
        read_samples(tmp_path / "x.txt")
    with pytest.raises(FormatError):
        read_samples(tmp_path / "missing.txt")


def test_read_config(tmp_path):
    (tmp_path / "c.cfg").write_text("# settings\nbeta-method = CD\nclasses=3  # inline\n\n")
    assert read_config(tmp_path / "c.cfg") == {"beta_method": "CD", "classes": "3"}
    (tmp_path / "bad.cfg").write_text("just words\n")
    with pytest.raises(FormatError):
        read_config(tmp_path / "bad.cfg")


def test_manifest_round_trip(tmp_path):
    m = RunManifest("segment", {"beta": 0.5}, {"a": "00"}, {"b": "11"}, 3, "0.1.0", ["segment"])
    m.write(tmp_path / "m.json")
    assert RunManifest.read(tmp_path / "m.json") == m
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(FormatError):
        RunManifest.read(tmp_path / "x.json")
