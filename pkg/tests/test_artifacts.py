import json

import numpy as np
import pytest

from photonic_gan.artifacts import (
    ArtifactError,
    append_csv_row,
    format_value,
    image_grid,
    read_csv,
    read_pgm,
    write_csv,
    write_manifest,
    write_pgm,
)


def test_format_six_significant_digits():
    assert format_value(3.14159265) == "3.14159"
    assert format_value(123456789.0) == "1.23457e+08"
    assert format_value(np.float32(0.5)) == "0.5"
    assert format_value(np.int64(7)) == "7"
    assert format_value("nf") == "nf"
    assert format_value(None) == ""


def test_csv_round_trip(tmp_path):
    p = write_csv(tmp_path / "sub" / "t.csv", ["a", "b"], [["x", 1.0 / 3], ["y", 2]])
    header, rows = read_csv(p)
    assert header == ["a", "b"]
    assert rows == [["x", "0.333333"], ["y", "2"]]
    assert p.read_text() == "a,b\nx,0.333333\ny,2\n"


def test_append_writes_header_once(tmp_path):
    p = tmp_path / "a.csv"
    append_csv_row(p, ["k", "v"], [1, 0.1])
    append_csv_row(p, ["k", "v"], [2, 0.2])
    assert p.read_text() == "k,v\n1,0.1\n2,0.2\n"


def test_grid_layout():
    imgs = np.zeros((49, 196))
    imgs[0] = 1.0
    imgs[48, 0] = 0.5
    grid = image_grid(imgs)
    assert grid.shape == (98, 98) and grid.dtype == np.uint8
    assert np.all(grid[:14, :14] == 255)
    assert grid[:14, 14:].max() == 0
    assert grid[84, 84] == 128  # round(0.5 * 255)
    # row-major: image k sits at block (k // 7, k % 7)
    ramp = np.repeat(np.arange(49)[:, None] / 48.0, 196, axis=1)
    g = image_grid(ramp)
    assert g[14 * 2 + 3, 14 * 5 + 3] == round(19 / 48 * 255)


def test_grid_partial_last_row_and_clipping():
    g = image_grid(np.full((8, 196), 2.0))
    assert g.shape == (28, 98)
    assert g[:14].min() == 255 and g[14:, 14:].max() == 0


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, size=(98, 98), dtype=np.uint8)
    p = write_pgm(tmp_path / "g.pgm", px)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n98 98\n255\n")
    back = read_pgm(p)
    assert np.array_equal(back, px)
    write_pgm(tmp_path / "h.pgm", back)
    assert (tmp_path / "h.pgm").read_bytes() == raw


def test_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        read_pgm(p)
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "y.pgm", np.zeros(4))


def test_io_errors_carry_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ArtifactError, match="file"):
        write_csv(blocker / "t.csv", ["a"], [])
    with pytest.raises(ArtifactError):
        read_pgm(tmp_path / "missing.pgm")


def test_manifest(tmp_path):
    p = write_manifest(tmp_path / "m.json", {"epochs": 3, "hidden": (4, 5)}, [0, 1], {"digits": "7"})
    d = json.loads(p.read_text())
    assert d["config"]["epochs"] == 3 and d["seeds"] == [0, 1] and d["digits"] == "7"
    assert "code_version" in d
