import base64
import json

import pytest

from fpsentry.capture import (
    CaptureLogError,
    CaptureLogWriter,
    CaptureRecord,
    file_digest,
    read_capture_digests,
    read_log,
    record_to_dict,
    visit_end_entry,
    visit_start_entry,
)
from fpsentry.detector import DetectorPipeline


def make_record(seq=1, body=b"sr=1280x1024", query=b""):
    return CaptureRecord(
        sequence_no=seq,
        page_origin="site-a.test",
        destination_host="tracker.example.net",
        destination_path="/collect",
        method="POST",
        scheme="http",
        query_bytes=query,
        body_bytes=body,
        content_type="application/x-www-form-urlencoded",
        timestamp=1700000000.0 + seq,
    )


def test_payload_size_matches_parts():
    rec = make_record(body=b"abc", query=b"q=1")
    assert rec.payload_size == len(b"q=1") + len(b"abc")


def test_invalid_method_rejected():
    with pytest.raises(ValueError, match="method"):
        CaptureRecord(sequence_no=1, page_origin="a", destination_host="b",
                      destination_path="/", method="PUT", scheme="http")


def test_invalid_scheme_rejected():
    with pytest.raises(ValueError, match="scheme"):
        CaptureRecord(sequence_no=1, page_origin="a", destination_host="b",
                      destination_path="/", method="GET", scheme="ftp")


def test_digest_is_stable_and_content_sensitive():
    assert make_record().digest() == make_record().digest()
    assert make_record().digest() != make_record(body=b"other").digest()
    # sequence number and timestamp do not participate
    assert make_record(seq=1).digest() == make_record(seq=2).digest()


def test_append_then_replay_round_trip(tmp_path):
    path = tmp_path / "capture.jsonl"
    writer = CaptureLogWriter(path, header_extra={"proxy_mode": "observe"})
    entries = [record_to_dict(make_record(seq=i), "forwarded", "ok") for i in range(3)]
    for e in entries:
        assert writer.append(e)
    writer.close()
    replayed = list(read_log(path))
    assert replayed[0]["record_type"] == "header"
    assert replayed[0]["proxy_mode"] == "observe"
    assert [e["seq"] for e in replayed[1:]] == [0, 1, 2]


def test_reopen_does_not_duplicate_header(tmp_path):
    path = tmp_path / "capture.jsonl"
    CaptureLogWriter(path).close()
    writer = CaptureLogWriter(path)
    writer.append(visit_start_entry("site-a.test"))
    writer.close()
    records = list(read_log(path))
    assert sum(1 for e in records if e["record_type"] == "header") == 1


def test_torn_trailing_line_is_tolerated(tmp_path):
    path = tmp_path / "capture.jsonl"
    writer = CaptureLogWriter(path)
    writer.append(record_to_dict(make_record(), "forwarded", "ok"))
    writer.close()
    with open(path, "a", encoding="utf-8") as fh:
        fh.write('{"record_type":"capture","seq":99,"trunc')
    replayed = list(read_log(path))
    assert len(replayed) == 2
    assert replayed[-1]["seq"] == 1


def test_writer_degrades_on_io_error(tmp_path):
    path = tmp_path / "capture.jsonl"
    writer = CaptureLogWriter(path)
    writer._fh.close()
    assert writer.append(visit_start_entry("s")) is False
    assert writer.degraded
    # further appends stay quiet rather than raising
    assert writer.append(visit_start_entry("s")) is False


def test_version_mismatch_rejected(tmp_path):
    path = tmp_path / "capture.jsonl"
    path.write_text(json.dumps({"record_type": "header", "log_version": 99}) + "\n")
    with pytest.raises(CaptureLogError, match="version"):
        list(read_log(path))


def test_missing_header_rejected(tmp_path):
    path = tmp_path / "capture.jsonl"
    path.write_text(json.dumps({"record_type": "capture", "seq": 1}) + "\n")
    with pytest.raises(CaptureLogError, match="header"):
        list(read_log(path))


def test_empty_log_rejected(tmp_path):
    path = tmp_path / "capture.jsonl"
    path.write_text("")
    with pytest.raises(CaptureLogError, match="empty"):
        list(read_log(path))


def test_capture_digest_preload(tmp_path):
    path = tmp_path / "capture.jsonl"
    assert read_capture_digests(path) == set()
    writer = CaptureLogWriter(path)
    rec = make_record()
    writer.append(record_to_dict(rec, "forwarded", "ok"))
    writer.close()
    assert read_capture_digests(path) == {("site-a.test", rec.digest())}


def test_record_to_dict_carries_inspection(catalog, profile):
    pipeline = DetectorPipeline(catalog, profile)
    rec = make_record(body=b"sr=1280x1024&fp=a1b2c3d4e5f6")
    inspection = pipeline.inspect(query=rec.query_bytes, body=rec.body_bytes)
    entry = record_to_dict(rec, "forwarded", "ok", inspection)
    assert entry["fingerprinting"] is True
    assert base64.b64decode(entry["body_b64"]) == rec.body_bytes
    attrs = {h["attribute"] for h in entry["hits"]}
    assert "resolution" in attrs
    assert [f["value"] for f in entry["fp_ids"]] == ["a1b2c3d4e5f6"]
    assert entry["payload_size"] == rec.payload_size
    assert entry["digest"] == rec.digest()


def test_visit_entries_shape():
    start = visit_start_entry("site-a.test")
    end = visit_end_entry("site-a.test", "loaded", 0.4, 3, revisited=True)
    assert start["record_type"] == "visit"
    assert end["record_type"] == "visit_end"
    assert end["status"] == "loaded"
    assert end["capture_count"] == 3
    assert end["revisited"] is True


def test_file_digest_changes_with_content(tmp_path):
    p1 = tmp_path / "a"
    p2 = tmp_path / "b"
    p1.write_bytes(b"one")
    p2.write_bytes(b"two")
    assert file_digest(p1) != file_digest(p2)
    assert len(file_digest(p1)) == 64
