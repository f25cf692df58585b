from __future__ import annotations

import numpy as np
import pytest

from pdat_common.errors import DataError
from pdat_data.sequences import GROUNDTRUTH_FILE, Sequence, load_dataset, read_groundtruth, write_sequence
from tests.helpers.fixtures import blob_frame


def _seq(seq_id: str, n: int, *, domain: str = "source", boxes: bool = True) -> Sequence:
    frames = [blob_frame(48, [(10 + i, 20)], 4) for i in range(n)]
    b = np.array([[6.0 + i, 16.0, 9.0, 9.0] for i in range(n)]) if boxes else None
    return Sequence(id=seq_id, frames=frames, boxes=b, domain=domain)


def test_load_dataset_round_trip(tmp_path):
    write_sequence(tmp_path, _seq("a", 10))
    write_sequence(tmp_path, _seq("b", 10))
    seqs = load_dataset(tmp_path, "source")
    assert [s.id for s in seqs] == ["a", "b"]
    assert [len(s) for s in seqs] == [10, 10]
    assert seqs[0].frame_size == (48, 48)
    np.testing.assert_allclose(seqs[0].boxes, _seq("a", 10).boxes, atol=1e-4)
    np.testing.assert_array_equal(seqs[0].frames[3], _seq("a", 10).frames[3])


def test_groundtruth_is_one_based_on_disk(tmp_path):
    write_sequence(tmp_path, _seq("a", 2))
    first = (tmp_path / "a" / GROUNDTRUTH_FILE).read_text().splitlines()[0]
    assert first.startswith("7.0000,17.0000")
    p = tmp_path / "gt.txt"
    p.write_text("1\t1\t5\t5\n\n3 4 2 2\n")
    np.testing.assert_array_equal(read_groundtruth(p), [[0, 0, 5, 5], [2, 3, 2, 2]])


def test_annotation_count_mismatch(tmp_path):
    write_sequence(tmp_path, _seq("a", 5))
    gt = tmp_path / "a" / GROUNDTRUTH_FILE
    gt.write_text("\n".join(gt.read_text().splitlines()[:4]) + "\n")
    with pytest.raises(DataError, match="annotation count mismatch"):
        load_dataset(tmp_path, "source")


def test_source_sequence_needs_groundtruth(tmp_path):
    write_sequence(tmp_path, _seq("a", 3), with_boxes=False)
    with pytest.raises(DataError):
        load_dataset(tmp_path, "source")


def test_target_sequences_load_without_boxes(tmp_path):
    write_sequence(tmp_path, _seq("t", 4, domain="target", boxes=False))
    (seq,) = load_dataset(tmp_path, "target")
    assert seq.boxes is None and not seq.has_boxes
    assert seq.domain == "target"


def test_unreadable_frame_is_skipped(tmp_path, caplog):
    write_sequence(tmp_path, _seq("t", 4, domain="target", boxes=False))
    (tmp_path / "t" / "img" / "000002.png").write_bytes(b"not an image")
    (seq,) = load_dataset(tmp_path, "target")
    assert len(seq) == 3
    assert "unreadable" in caplog.text


def test_sequence_with_only_unreadable_frames_fails(tmp_path):
    d = tmp_path / "t" / "img"
    d.mkdir(parents=True)
    (d / "000001.png").write_bytes(b"junk")
    with pytest.raises(DataError):
        load_dataset(tmp_path, "target")


def test_sequence_invariants():
    frames = [np.zeros((10, 10, 3), np.uint8), np.zeros((10, 12, 3), np.uint8)]
    with pytest.raises(DataError):
        Sequence(id="x", frames=frames, boxes=None, domain="target")
    with pytest.raises(DataError):
        Sequence(id="x", frames=[np.zeros((10, 10), np.uint8)], boxes=[[5, 5, 8, 8]], domain="source")
    with pytest.raises(DataError):
        Sequence(id="x", frames=[np.zeros((10, 10), np.uint8)], boxes=[[1, 1, 0, 3]], domain="source")
    ok = Sequence(id="x", frames=[np.zeros((10, 10), np.uint8)], boxes=[[1, 1, 3, 3]], domain="source")
    assert ok.frames[0].shape == (10, 10, 1)


def test_missing_root(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope", "source")
