"""Manifest validation, the export operation, and the CLI surface."""

import json
import os
import struct
import subprocess
import sys

import numpy as np
import pytest

from qemb_export.encoders import HashedEncoder
from qemb_export.errors import ConfigError, DataError
from qemb_export.export import (
    ExportManifest,
    export_embeddings,
    load_manifest,
    resolve_sources,
)
from qemb_export.writer import sidecar_path

_HEADER = struct.Struct("<4sHHIQ4s")


def _parse(path):
    raw = open(path, "rb").read()
    _, _, _, dim, count, _ = _HEADER.unpack_from(raw, 0)
    rows = np.frombuffer(raw[_HEADER.size :], dtype="<f4").reshape(count, dim)
    with open(sidecar_path(path), "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return rows, records


def _manifest(tmp_path, **kwargs):
    kwargs.setdefault("output", str(tmp_path / "out.qemb"))
    kwargs.setdefault("dimension", 8)
    if "source_file" not in kwargs:
        kwargs.setdefault("sources", ("one", "two"))
    return ExportManifest(**kwargs)


class TestManifest:
    @pytest.mark.parametrize(
        "kwargs,fragment",
        [
            (dict(output=""), "output"),
            (dict(encoder=""), "encoder"),
            (dict(dimension=0), ">= 1"),
            (dict(dimension=True), "integer"),
            (dict(dimension="8"), "integer"),
            (dict(normalize="yes"), "normalize"),
            (dict(kind="video"), "kind"),
            (dict(sources=("a",), source_file="f.txt"), "not both"),
            (dict(sources=None), "sources or source_file"),
        ],
    )
    def test_rejects(self, tmp_path, kwargs, fragment):
        base = dict(output=str(tmp_path / "o.qemb"), dimension=8, sources=("a",))
        base.update(kwargs)
        with pytest.raises(ConfigError, match=fragment):
            ExportManifest(**base)

    def test_load_rejects_unknown_fields(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"output": "o.qemb", "sources": [], "batch": 4}))
        with pytest.raises(ConfigError, match="unknown fields.*batch"):
            load_manifest(str(path))

    def test_load_rejects_bad_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_manifest(str(path))

    def test_load_rejects_non_object(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            load_manifest(str(path))

    def test_load_round_trip(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(
            json.dumps(
                {
                    "output": "o.qemb",
                    "sources": ["a", "b"],
                    "dimension": 4,
                    "normalize": True,
                    "kind": "owk",
                }
            )
        )
        m = load_manifest(str(path))
        assert m.sources == ("a", "b") and m.kind == "owk" and m.normalize

    def test_missing_manifest_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_manifest(str(tmp_path / "absent.json"))


class TestSources:
    def test_inline(self, tmp_path):
        assert resolve_sources(_manifest(tmp_path)) == ["one", "two"]

    def test_file_lines_preserved(self, tmp_path):
        src = tmp_path / "texts.txt"
        src.write_text("first\n\nthird\n", encoding="utf-8")
        m = _manifest(tmp_path, source_file=str(src))
        assert resolve_sources(m) == ["first", "", "third"]

    def test_unreadable_file(self, tmp_path):
        m = _manifest(tmp_path, source_file=str(tmp_path / "absent.txt"))
        with pytest.raises(DataError, match="unreadable source file"):
            resolve_sources(m)


class TestExport:
    def test_rows_match_encoder_in_order(self, tmp_path):
        texts = ("zurich", "madrid", "zurich")
        result = export_embeddings(_manifest(tmp_path, sources=texts))
        rows, records = _parse(result.output)
        want = HashedEncoder().encode_texts(list(texts), 8).astype(np.float32)
        np.testing.assert_array_equal(rows, want)
        np.testing.assert_array_equal(rows[0], rows[2])
        assert [r["text_ref"] for r in records] == list(texts)
        assert [r["id"] for r in records] == ["text000000", "text000001", "text000002"]

    def test_records_carry_export_metadata(self, tmp_path):
        result = export_embeddings(_manifest(tmp_path, normalize=True, kind="owk"))
        _, records = _parse(result.output)
        assert all(r["kind"] == "owk" for r in records)
        assert all(r["encoder"] == "hashed-v1" for r in records)
        assert all(r["normalize"] is True for r in records)

    def test_label_kind_writes_label_text(self, tmp_path):
        result = export_embeddings(
            _manifest(tmp_path, kind="label", sources=("Zurich, Switzerland, Europe",))
        )
        _, records = _parse(result.output)
        assert records[0]["kind"] == "label"
        assert records[0]["label_text"] == "Zurich, Switzerland, Europe"
        assert "text_ref" not in records[0]

    def test_zero_sources_valid_empty(self, tmp_path):
        result = export_embeddings(_manifest(tmp_path, sources=()))
        rows, records = _parse(result.output)
        assert result.rows == 0 and rows.shape == (0, 8) and records == []

    def test_image_kind_hashes_file_bytes(self, tmp_path):
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        a.write_bytes(b"\x89PNG fake")
        b.write_bytes(b"\x89PNG fake")
        result = export_embeddings(
            _manifest(tmp_path, kind="image", sources=(str(a), str(b)))
        )
        rows, records = _parse(result.output)
        np.testing.assert_array_equal(rows[0], rows[1])
        assert records[0]["kind"] == "image_view"
        assert records[0]["source"] == str(a)

    def test_missing_image_is_data_error(self, tmp_path):
        m = _manifest(tmp_path, kind="image", sources=(str(tmp_path / "absent.png"),))
        with pytest.raises(DataError, match="unreadable source"):
            export_embeddings(m)

    def test_creates_output_directory(self, tmp_path):
        out = tmp_path / "nested" / "deep" / "o.qemb"
        result = export_embeddings(_manifest(tmp_path, output=str(out)))
        assert os.path.exists(result.output) and os.path.exists(result.sidecar)

    def test_reexport_is_bitwise_stable(self, tmp_path):
        m = _manifest(tmp_path, sources=("a", "b", "c"))
        export_embeddings(m)
        first = open(m.output, "rb").read(), open(sidecar_path(m.output), "rb").read()
        export_embeddings(m)
        second = open(m.output, "rb").read(), open(sidecar_path(m.output), "rb").read()
        assert first == second


def _run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "qemb_export.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
        timeout=120,
    )


class TestCli:
    def test_export_prints_result(self, tmp_path):
        manifest = tmp_path / "m.json"
        manifest.write_text(
            json.dumps(
                {
                    "output": str(tmp_path / "o.qemb"),
                    "sources": ["x", "y"],
                    "dimension": 4,
                }
            )
        )
        proc = _run_cli(["export", "--manifest", str(manifest)], tmp_path)
        assert proc.returncode == 0, proc.stderr
        result = json.loads(proc.stdout)
        assert result["rows"] == 2 and result["dimension"] == 4
        assert os.path.exists(result["output"]) and os.path.exists(result["sidecar"])

    def test_missing_manifest_exits_2(self, tmp_path):
        proc = _run_cli(["export", "--manifest", str(tmp_path / "absent.json")], tmp_path)
        assert proc.returncode == 2
        assert "qemb-export:" in proc.stderr

    def test_unreadable_source_exits_3(self, tmp_path):
        manifest = tmp_path / "m.json"
        manifest.write_text(
            json.dumps(
                {
                    "output": str(tmp_path / "o.qemb"),
                    "source_file": str(tmp_path / "absent.txt"),
                    "dimension": 4,
                }
            )
        )
        proc = _run_cli(["export", "--manifest", str(manifest)], tmp_path)
        assert proc.returncode == 3

    def test_unavailable_encoder_exits_2(self, tmp_path):
        import importlib.util

        if importlib.util.find_spec("open_clip") is not None:
            pytest.skip("open_clip installed; the gate would load a real model")
        manifest = tmp_path / "m.json"
        manifest.write_text(
            json.dumps(
                {
                    "output": str(tmp_path / "o.qemb"),
                    "sources": ["x"],
                    "dimension": 512,
                    "encoder": "clip:ViT-B-32",
                }
            )
        )
        proc = _run_cli(["export", "--manifest", str(manifest)], tmp_path)
        assert proc.returncode == 2
        assert "load failure" in proc.stderr
