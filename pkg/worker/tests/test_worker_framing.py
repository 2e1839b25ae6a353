import io
import json
import struct

import pytest

from codeworker.framing import FrameError, read_frame, write_frame


def frame_bytes(obj) -> bytes:
    payload = json.dumps(obj).encode()
    return struct.pack(">I", len(payload)) + payload


class TestReadFrame:
    def test_round_trip(self):
        buf = io.BytesIO()
        write_frame(buf, {"id": "a", "n": 1})
        buf.seek(0)
        assert read_frame(buf) == {"id": "a", "n": 1}

    def test_eof_returns_none(self):
        assert read_frame(io.BytesIO(b"")) is None

    def test_truncated_header(self):
        with pytest.raises(FrameError, match="header"):
            read_frame(io.BytesIO(b"\x00\x00"))

    def test_truncated_payload(self):
        data = struct.pack(">I", 10) + b"abc"
        with pytest.raises(FrameError, match="mid-frame"):
            read_frame(io.BytesIO(data))

    def test_invalid_json(self):
        data = struct.pack(">I", 3) + b"{{{"
        with pytest.raises(FrameError, match="JSON"):
            read_frame(io.BytesIO(data))

    def test_non_object_payload(self):
        with pytest.raises(FrameError, match="object"):
            read_frame(io.BytesIO(frame_bytes([1, 2])))

    def test_oversized_frame_rejected(self):
        data = struct.pack(">I", 1 << 31)
        with pytest.raises(FrameError, match="limit"):
            read_frame(io.BytesIO(data))

    def test_two_frames_in_sequence(self):
        buf = io.BytesIO(frame_bytes({"a": 1}) + frame_bytes({"b": 2}))
        assert read_frame(buf) == {"a": 1}
        assert read_frame(buf) == {"b": 2}
        assert read_frame(buf) is None
