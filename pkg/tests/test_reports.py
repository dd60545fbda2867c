"""Tests for report assembly and the atomic writers."""

import json
import math

import numpy as np
import pytest

from src.reports import (
    CSV_SCHEMA_LINE,
    REPORT_SCHEMA,
    build_report,
    content_hash,
    host_snapshot,
    inputs_hash,
    read_csv,
    to_jsonable,
    write_csv,
    write_json,
    write_ndjson,
)
from src.stats import mean_ci


def test_to_jsonable_handles_numpy_and_non_finite():
    payload = to_jsonable(
        {"a": np.float64(1.5), "b": np.arange(3), "c": (math.inf, -math.inf, math.nan), 4: True}
    )
    assert payload == {"a": 1.5, "b": [0, 1, 2], "c": ["inf", "-inf", "nan"], "4": True}


def test_to_jsonable_uses_to_dict():
    payload = to_jsonable([mean_ci([1.0, 3.0])])
    assert payload[0]["estimate"] == 2.0


def test_content_hash_matches_git_blob_hash():
    # `git hash-object` of an empty file.
    assert content_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"


def test_inputs_hash_ignores_key_order():
    assert inputs_hash({"a": 1, "b": 2}) == inputs_hash({"b": 2, "a": 1})
    assert inputs_hash({"a": 1}) != inputs_hash({"a": 2})


def test_host_snapshot_without_psutil(mocker):
    mocker.patch.dict("sys.modules", {"psutil": None})
    snapshot = host_snapshot()
    assert "python" in snapshot and "numpy" in snapshot
    assert "cpu_count" not in snapshot


def test_build_report_schema():
    report = build_report("kappa", {"seed": 1}, [], passed=True, error={"type": "X"})
    assert report["schema"] == REPORT_SCHEMA
    assert report["command"] == "kappa"
    assert report["passed"] is True
    assert report["inputs_hash"] == inputs_hash({"seed": 1})
    assert report["error"] == {"type": "X"}


def test_write_json_creates_directories(tmp_path):
    path = write_json(tmp_path / "out" / "report.json", {"value": math.inf})
    assert json.loads(path.read_text(encoding="utf-8")) == {"value": "inf"}
    assert not list(path.parent.glob("*.tmp"))


def test_write_ndjson(tmp_path):
    path = write_ndjson(tmp_path / "rows.ndjson", [{"a": 1}, {"a": 2}])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["a"] for line in lines] == [1, 2]


def test_csv_has_schema_line(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["q", "kappa"], [(1.0, np.float64(0.5))])
    assert path.read_text(encoding="utf-8").splitlines()[0] == CSV_SCHEMA_LINE
    header, rows = read_csv(path)
    assert header == ["q", "kappa"]
    assert rows == [["1.0", "0.5"]]


def test_read_csv_rejects_foreign_files(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("q,kappa\n1,2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_csv(path)
