import io
import json
import os

import numpy as np
import pytest

from ihmm_stream.errors import (CheckpointVersionError, CorruptCheckpointError, SchemaError,
                                SequencingError)
from ihmm_stream.simulate import DemographicsSpec, SegmentSpec, gen_population
from ihmm_stream.storage import (MAGIC, day_effect, emit, infer_layout, ingest, load_checkpoint,
                                 parse_event, read_demographics, read_truth, save_checkpoint,
                                 write_demographics, write_truth)
from ihmm_stream.types import CovariateLayout

NAMED = {"user_id": "a", "t": 1, "y": 1, "cont": 0, "rcv": 2, "crep": 0, "rep": 0, "rnk": 1,
         "drnk": 0, "bdg": [0, 0, 0], "tag": [], "cbdg": [0, 0, 0], "ctag": []}


def lines(*objs):
    return io.StringIO("".join(json.dumps(o) + "\n" for o in objs))


def population(I=4, T=30, layout=None, seed=0):
    means = np.zeros((1, 4 if layout is None else 2 * layout.d))
    seg = SegmentSpec([1.0], means, np.eye(means.shape[1])[None] * 0.01)
    return gen_population(I, seg, DemographicsSpec(2), seed, T=T, layout=2 if layout is None else layout)


class TestParse:
    def test_named_record(self):
        rec = parse_event(dict(NAMED), 1, CovariateLayout())
        assert rec.x[0] == 1.0 and rec.x[1] == 0.0
        assert rec.x[3] == pytest.approx(0.02)

    def test_day_default_and_override(self):
        assert day_effect(6) == 1.0 and day_effect(7) == 1.0 and day_effect(8) == 0.0
        rec = parse_event({**NAMED, "t": 6}, 1, CovariateLayout())
        assert rec.x[1] == 1.0
        rec = parse_event({**NAMED, "day": 0.25}, 1, CovariateLayout())
        assert rec.x[1] == 0.25

    def test_plain_record(self):
        rec = parse_event({"user_id": "a", "t": 3, "y": 0, "x": [1, 0.5]}, 1)
        np.testing.assert_array_equal(rec.x, [1.0, 0.5])

    @pytest.mark.parametrize("bad", [
        {"t": 1, "y": 1, "x": [1]},
        {"user_id": "a", "t": 0, "y": 1, "x": [1]},
        {"user_id": "a", "t": 1.5, "y": 1, "x": [1]},
        {"user_id": "a", "t": True, "y": 1, "x": [1]},
        {"user_id": "a", "t": 1, "y": 2, "x": [1]},
        {"user_id": "a", "t": 1, "y": 1, "x": []},
        {"user_id": "a", "t": 1, "y": 1, "x": [1, "2"]},
        {"user_id": "", "t": 1, "y": 1, "x": [1]},
    ])
    def test_schema_errors(self, bad):
        with pytest.raises(SchemaError):
            parse_event(bad, 4)

    def test_named_errors(self):
        lay = CovariateLayout()
        with pytest.raises(SchemaError):
            parse_event({k: v for k, v in NAMED.items() if k != "rcv"}, 1, lay)
        with pytest.raises(SchemaError):
            parse_event({**NAMED, "bdg": [0, 0]}, 1, lay)
        with pytest.raises(SchemaError):
            parse_event({**NAMED, "cont": float("nan")}, 1, lay)
        with pytest.raises(SchemaError):
            parse_event({**NAMED, "extra": 1}, 1, lay, strict=True)
        assert parse_event({**NAMED, "extra": 1}, 1, lay).t == 1


class TestIngest:
    def test_empty(self):
        reader = ingest(io.StringIO(""))
        assert list(reader) == [] and reader.stats.records == 0
        assert infer_layout(io.StringIO("")) is None

    def test_bad_y_reports_line(self):
        src = lines({"user_id": "a", "t": 1, "y": 1, "x": [1]}, {"user_id": "a", "t": 2, "y": 2, "x": [1]})
        with pytest.raises(SchemaError, match="line 2"):
            list(ingest(src, strict=True))

    def test_lenient_skips(self):
        src = io.StringIO('{"user_id": "a", "t": 1, "y": 1, "x": [1]}\nnot json\n'
                          '{"user_id": "a", "t": 3, "y": 1, "x": [1]}\n'
                          '{"user_id": "a", "t": 2, "y": 0, "x": [1]}\n')
        reader = ingest(src)
        assert [r.t for r in reader] == [1, 2]
        assert reader.stats.malformed == 1 and reader.stats.out_of_order == 1
        assert len(reader.stats.problems) == 2

    def test_strict_ordering(self):
        src = lines({"user_id": "a", "t": 2, "y": 1, "x": [1]})
        with pytest.raises(SequencingError):
            list(ingest(src, strict=True))

    def test_users_interleave(self):
        src = lines(*({"user_id": u, "t": t, "y": 0, "x": [1]} for t in (1, 2) for u in "ba"))
        assert [(r.user_id, r.t) for r in ingest(src, strict=True)] == [("b", 1), ("a", 1), ("b", 2), ("a", 2)]


class TestRoundTrip:
    def test_plain_lossless_large(self, tmp_path):
        ds = population(I=100, T=1000)
        path = tmp_path / "ev.jsonl"
        emit(ds.records, path)
        with open(path) as fh:
            assert sum(1 for _ in fh) == 100_000
        back = list(ingest(path, infer_layout(path), strict=True))
        assert back == ds.records

    def test_named_lossless(self, tmp_path):
        lay = CovariateLayout(n_tags=2)
        ds = population(I=3, T=40, layout=lay)
        path = tmp_path / "ev.jsonl"
        emit(ds.records, path, ds.fields)
        layout = infer_layout(path)
        assert layout.n_tags == 2
        back = list(ingest(path, layout, strict=True))
        assert back == ds.records
        again = tmp_path / "again.jsonl"
        emit(back, again)
        assert list(ingest(again, None, strict=True)) == ds.records

    def test_sidecars(self, tmp_path):
        ds = population(I=3, T=10)
        write_demographics(ds.demographics, tmp_path / "d.jsonl")
        demo = read_demographics(tmp_path / "d.jsonl")
        for u in ds.users():
            np.testing.assert_array_equal(demo[u], ds.demographics[u])
        write_truth(ds, tmp_path / "t.jsonl")
        truth, Delta = read_truth(tmp_path / "t.jsonl")
        np.testing.assert_array_equal(Delta, ds.Delta)
        np.testing.assert_array_equal(truth["u1"]["states"], ds.truth["u1"]["states"])

    def test_bad_demographics(self):
        with pytest.raises(SchemaError):
            read_demographics(io.StringIO('{"user_id": "a"}\n'))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        state = {"a": np.arange(5), "b": [1, 2]}
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, state)
        back = load_checkpoint(p)
        np.testing.assert_array_equal(back["a"], state["a"])
        assert os.listdir(tmp_path) == ["c.ckpt"]

    def test_version(self, tmp_path):
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, {}, version=99)
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(p)

    def test_corrupt(self, tmp_path):
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, {"x": 1})
        blob = bytearray(p.read_bytes())
        blob[-1] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)
        p.write_bytes(b"NOTACKPT" + bytes(40))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)
        p.write_bytes(MAGIC[:4])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)

    def test_failed_write_keeps_old_file(self, tmp_path):
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, {"x": 1})

        class Unpicklable:
            def __reduce__(self):
                raise RuntimeError("boom")

        with pytest.raises(RuntimeError):
            save_checkpoint(p, {"x": Unpicklable()})
        assert load_checkpoint(p) == {"x": 1}
        assert os.listdir(tmp_path) == ["c.ckpt"]

    def test_crash_during_write(self, tmp_path, monkeypatch):
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, {"x": 1})

        def no_sync(fd):
            raise OSError("disk gone")

        monkeypatch.setattr(os, "fsync", no_sync)
        with pytest.raises(OSError):
            save_checkpoint(p, {"x": 2})
        assert load_checkpoint(p) == {"x": 1}
        assert os.listdir(tmp_path) == ["c.ckpt"]
