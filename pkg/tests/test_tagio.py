import numpy as np
import pytest

from photonkit import tagio
from photonkit.core import TimeTagStream
from photonkit.tagio import TagFileError


def sample_stream():
    return TimeTagStream(np.array([0, 1, 0], dtype=np.uint16),
                         np.array([10, 15, 20]), 4e-12, 2)


def test_ptt1_round_trip(tmp_path):
    path = tmp_path / "s.ptt1"
    s = sample_stream()
    tagio.write_ptt1(s, path)
    back = tagio.read_ptt1(path)
    assert np.array_equal(back.channels, s.channels)
    assert np.array_equal(back.ticks, s.ticks)
    assert back.resolution == pytest.approx(4e-12)
    assert back.channel_count == 2


def test_ptt1_header_layout(tmp_path):
    path = tmp_path / "s.ptt1"
    tagio.write_ptt1(sample_stream(), path)
    data = path.read_bytes()
    assert data[:4] == b"PTT1"
    assert int.from_bytes(data[4:8], "little") == 4000  # 4 ps in fs
    assert int.from_bytes(data[8:10], "little") == 2
    assert data[10:16] == b"\x00" * 6
    assert len(data) == 16 + 3 * 9


def test_ptt1_bad_magic(tmp_path):
    path = tmp_path / "bad.ptt1"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(TagFileError) as exc:
        tagio.read_ptt1(path)
    assert exc.value.offset == 0


def test_ptt1_truncated_record(tmp_path):
    path = tmp_path / "trunc.ptt1"
    tagio.write_ptt1(sample_stream(), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TagFileError) as exc:
        tagio.read_ptt1(path)
    assert exc.value.offset == 16 + 2 * 9


def test_ptt1_empty_stream(tmp_path):
    path = tmp_path / "empty.ptt1"
    empty = TimeTagStream(np.empty(0, dtype=np.uint16), np.empty(0, dtype=np.int64))
    tagio.write_ptt1(empty, path)
    assert len(tagio.read_ptt1(path)) == 0


def test_csv_round_trip(tmp_path):
    path = tmp_path / "s.csv"
    s = sample_stream()
    tagio.write_csv(s, path)
    assert path.read_text().splitlines()[0] == "channel,ticks"
    back = tagio.read_csv(path)
    assert np.array_equal(back.channels, s.channels)
    assert np.array_equal(back.ticks, s.ticks)
