"""Emitter checks against a hand-parsed view of the on-disk format."""

import json
import os
import struct

import numpy as np
import pytest

from qemb_export.errors import DataError
from qemb_export.writer import sidecar_path, write_qemb

_HEADER = struct.Struct("<4sHHIQ4s")


def _parse(path):
    """Independent parse: header fields, float rows, sidecar records."""
    raw = open(path, "rb").read()
    magic, version, reserved, dim, count, pad = _HEADER.unpack_from(raw, 0)
    rows = np.frombuffer(raw[_HEADER.size :], dtype="<f4").reshape(count, dim)
    with open(sidecar_path(path), "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return (magic, version, reserved, dim, count, pad), rows, records


def test_round_trip_fields(tmp_path):
    path = str(tmp_path / "t.qemb")
    vectors = np.arange(12, dtype=np.float64).reshape(3, 4) / 7.0
    records = [{"id": f"r{i}", "kind": "text", "text_ref": f"line {i}"} for i in range(3)]
    write_qemb(path, vectors, records)

    header, rows, got = _parse(path)
    assert header == (b"QEMB", 1, 0, 4, 3, b"\x00" * 4)
    np.testing.assert_array_equal(rows, vectors.astype(np.float32))
    assert got == records


def test_empty_corpus_is_valid(tmp_path):
    path = str(tmp_path / "empty.qemb")
    write_qemb(path, np.zeros((0, 8)), [])
    header, rows, records = _parse(path)
    assert header[3] == 8 and header[4] == 0
    assert rows.shape == (0, 8) and records == []


def test_sidecar_lines_are_canonical(tmp_path):
    path = str(tmp_path / "c.qemb")
    write_qemb(path, np.ones((1, 2)), [{"kind": "owk", "id": "a", "z": 1}])
    line = open(sidecar_path(path), "rb").read()
    assert line == b'{"id":"a","kind":"owk","z":1}\n'


@pytest.mark.parametrize(
    "vectors,records,fragment",
    [
        (np.ones(4), [{"id": "a", "kind": "text"}], "2-d"),
        (np.ones((2, 0)), [{"id": "a", "kind": "text"}] * 2, "dimension"),
        (np.ones((2, 3)), [{"id": "a", "kind": "text"}], "records"),
        (np.ones((1, 3)), [{"kind": "text"}], "id/kind"),
        (np.ones((1, 3)), [{"id": "a"}], "id/kind"),
        (np.ones((1, 3)), [{"id": "a", "kind": "vibes"}], "unknown kind"),
        (np.array([[np.nan, 1.0]]), [{"id": "a", "kind": "text"}], "non-finite"),
    ],
)
def test_rejects_bad_writes(tmp_path, vectors, records, fragment):
    with pytest.raises(DataError, match=fragment):
        write_qemb(str(tmp_path / "bad.qemb"), vectors, records)


def test_no_temp_files_left_behind(tmp_path):
    path = str(tmp_path / "t.qemb")
    write_qemb(path, np.ones((2, 2)), [{"id": f"r{i}", "kind": "text"} for i in range(2)])
    leftovers = [name for name in os.listdir(tmp_path) if name.endswith(".tmp")]
    assert leftovers == []
