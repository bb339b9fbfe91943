import struct

import numpy as np
import pytest

from kvcompress.attention import full_attention
from kvcompress.scoring import ScoreTracker
from kvcompress.workload import (
    HEADER,
    Trace,
    TraceFormatError,
    TruncatedTraceError,
    UnsupportedVersionError,
    decode_trace,
    encode_trace,
    gen_gaussian,
    gen_heavy_hitter,
    hot_positions,
    read_steps,
    read_trace,
    write_trace,
)


class TestGenerators:
    def test_tiny(self):
        tr = gen_gaussian(1, 2, 123)
        assert len(tr) == 1 and tr.head_dim == 2
        assert len(tr.steps) == 1 and tr.steps[0].k.shape == (2,)

    def test_deterministic(self):
        assert gen_gaussian(64, 8, 5) == gen_gaussian(64, 8, 5)
        assert gen_heavy_hitter(64, 8, 3, 2.0, 5) == gen_heavy_hitter(64, 8, 3, 2.0, 5)
        assert gen_gaussian(64, 8, 5) != gen_gaussian(64, 8, 6)

    def test_sample_mean(self):
        tr = gen_gaussian(256, 16, 7)
        allv = np.concatenate([tr.q.ravel(), tr.k.ravel(), tr.v.ravel()])
        assert abs(allv.mean()) <= 4 / np.sqrt(256 * 16 * 3)

    def test_zero_gain_matches_gaussian(self):
        a, b = gen_heavy_hitter(50, 4, 5, 0.0, 11), gen_gaussian(50, 4, 11)
        assert a.q.tobytes() == b.q.tobytes() and a.k.tobytes() == b.k.tobytes() and a.v.tobytes() == b.v.tobytes()

    def test_no_hot_tokens(self):
        a, b = gen_heavy_hitter(50, 4, 0, 3.0, 11), gen_gaussian(50, 4, 11)
        assert a.k.tobytes() == b.k.tobytes() and a.q.tobytes() == b.q.tobytes()

    def test_hot_tokens_attract_attention(self):
        T, d = 128, 16
        tr = gen_heavy_hitter(T, d, 4, 3.0, 7)
        hot = set(hot_positions(T, d, 4, 7).tolist())
        assert len(hot) == 4 and max(hot) < T // 4
        tracker = ScoreTracker(0.98)
        for t, (q, _, _) in enumerate(tr, start=1):
            tracker.register(t - 1)
            w = full_attention(q, tr.k[:t], tr.v[:t]).weights
            tracker.update(dict(enumerate(w.tolist())))
        hot_mean = np.mean([tracker.score(i) for i in hot])
        cold_mean = np.mean([tracker.score(i) for i in range(T) if i not in hot])
        assert hot_mean > cold_mean

    @pytest.mark.parametrize("args", [(0, 4, 1), (4, 0, 1)])
    def test_bad_shape(self, args):
        with pytest.raises(ValueError):
            gen_gaussian(*args)

    def test_bad_hot(self):
        with pytest.raises(ValueError):
            gen_heavy_hitter(4, 2, 5, 1.0, 0)
        with pytest.raises(ValueError):
            gen_heavy_hitter(4, 2, 1, -1.0, 0)


class TestFormat:
    def test_round_trip(self, tmp_path):
        for tr in (gen_gaussian(33, 5, 1), gen_heavy_hitter(40, 3, 2, 1.5, 2**64 - 1)):
            p = tmp_path / "t.kvtr"
            write_trace(tr, p)
            assert read_trace(p) == tr
            assert read_trace(p).kind == tr.kind

    def test_layout(self):
        tr = Trace(np.array([[1.0]]), np.array([[2.0]]), np.array([[3.0]]), 5, "gaussian")
        raw = encode_trace(tr)
        assert raw[:4] == b"KVTR"
        assert struct.unpack("<IIQQB", raw[4:29]) == (1, 1, 1, 5, 1)
        assert struct.unpack("<3d", raw[29:]) == (1.0, 2.0, 3.0)
        assert HEADER.size == 29

    def test_truncated_names_record(self):
        raw = encode_trace(gen_gaussian(10, 4, 0))
        with pytest.raises(TruncatedTraceError) as exc:
            decode_trace(raw[:-5])
        assert exc.value.record_index == 9
        assert "record 9" in str(exc.value)

    def test_bad_version(self):
        raw = bytearray(encode_trace(gen_gaussian(2, 2, 0)))
        raw[4:8] = struct.pack("<I", 2)
        with pytest.raises(UnsupportedVersionError):
            decode_trace(bytes(raw))

    def test_bad_magic_and_short_header(self):
        raw = encode_trace(gen_gaussian(2, 2, 0))
        with pytest.raises(TraceFormatError):
            decode_trace(b"XXXX" + raw[4:])
        with pytest.raises(TraceFormatError):
            decode_trace(raw[:10])

    def test_trailing_bytes_and_dim(self):
        raw = encode_trace(gen_gaussian(2, 2, 0))
        with pytest.raises(TraceFormatError):
            decode_trace(raw + b"\0")
        with pytest.raises(TraceFormatError):
            decode_trace(raw, head_dim=3)

    def test_seek_partial(self, tmp_path):
        tr = gen_gaussian(20, 3, 4)
        p = tmp_path / "t.kvtr"
        write_trace(tr, p)
        recs = read_steps(p, 5, 8)
        assert len(recs) == 3
        for i, r in zip(range(5, 8), recs):
            assert r.q.tobytes() == tr.q[i].tobytes() and r.v.tobytes() == tr.v[i].tobytes()
        with pytest.raises(IndexError):
            read_steps(p, 5, 21)
