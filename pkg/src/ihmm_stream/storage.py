"""JSONL events, demographics and ground-truth sidecars, plus versioned
checkpoint files.

Event lines come in two shapes.  Named records carry the community
covariates by name (cont, rcv, crep, rep, rnk, drnk, bdg, tag, cbdg, ctag);
the intercept is implicit and the day effect defaults to the weekend
indicator of tick t - 1.  Plain records carry a ready covariate vector
under ``x``.
"""

import hashlib
import json
import logging
import os
import pickle
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointVersionError, CorruptCheckpointError, DataError, SchemaError, SequencingError
from .simulate import WEEK, AssetConfig
from .types import SCALAR_FIELDS, CovariateLayout, ObservationRecord

log = logging.getLogger(__name__)

BASE_KEYS = ("user_id", "t", "y")
VECTOR_KEYS = ("bdg", "tag", "cbdg", "ctag")
NAMED_KEYS = frozenset(BASE_KEYS + SCALAR_FIELDS + VECTOR_KEYS + ("day",))
PLAIN_KEYS = frozenset(BASE_KEYS + ("x",))


def day_effect(t, weekend=AssetConfig.weekend_days):
    return 1.0 if (int(t) - 1) % WEEK in weekend else 0.0


def _open(source, mode="r"):
    if isinstance(source, (str, bytes, os.PathLike)):
        return open(source, mode, encoding="utf-8"), True
    return source, False


# --- events -------------------------------------------------------------------------

def _number(obj, key, line, kind=float):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{key!r} must be a number, got {v!r}", line)
    if kind is int and (not isinstance(v, int)):
        raise SchemaError(f"{key!r} must be an integer, got {v!r}", line)
    if not np.isfinite(v):
        raise SchemaError(f"{key!r} must be finite", line)
    return v


def parse_event(obj, line, layout=None, strict=False):
    """Validate one decoded JSON object into an ObservationRecord."""
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", line)
    for key in BASE_KEYS:
        if key not in obj:
            raise SchemaError(f"missing field {key!r}", line)
    uid = obj["user_id"]
    if not isinstance(uid, str) or not uid:
        raise SchemaError("user_id must be a non-empty string", line)
    t = _number(obj, "t", line, int)
    if t < 1:
        raise SchemaError(f"t must be >= 1, got {t}", line)
    y = obj["y"]
    if isinstance(y, bool) or y not in (0, 1):
        raise SchemaError(f"y must be 0 or 1, got {y!r}", line)
    plain = "x" in obj
    allowed = PLAIN_KEYS if plain else NAMED_KEYS
    extra = sorted(set(obj) - allowed)
    if extra and strict:
        raise SchemaError(f"unknown fields {extra}", line)
    if plain:
        x = obj["x"]
        if not isinstance(x, list) or not x or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
            raise SchemaError("x must be a non-empty list of numbers", line)
        x = np.asarray(x, dtype=float)
        if layout is not None and x.shape[0] != layout.d:
            raise SchemaError(f"x has length {x.shape[0]}, expected {layout.d}", line)
    else:
        if layout is None:
            raise SchemaError("named covariates need a layout", line)
        fields = {"ind": 1.0, "day": day_effect(t)}
        if "day" in obj:
            fields["day"] = _number(obj, "day", line)
        for key in SCALAR_FIELDS:
            if key not in obj:
                raise SchemaError(f"missing field {key!r}", line)
            fields[key] = _number(obj, key, line)
        for key, size in layout.vector_fields().items():
            vec = obj.get(key, [] if size == 0 else None)
            if not isinstance(vec, list) or len(vec) != size:
                raise SchemaError(f"{key!r} must be a list of {size} numbers", line)
            fields[key] = [_number({key: v}, key, line) for v in vec]
        x = layout.pack(fields)
    try:
        return ObservationRecord(uid, int(t), int(y), x)
    except DataError as exc:
        raise SchemaError(str(exc), line) from None


@dataclass
class IngestStats:
    lines: int = 0
    records: int = 0
    malformed: int = 0
    out_of_order: int = 0
    problems: list = field(default_factory=list)

    def as_dict(self):
        return {"lines": self.lines, "records": self.records, "malformed": self.malformed,
                "out_of_order": self.out_of_order}


class Ingest:
    """Iterator over validated records of a JSONL source.

    Each user's records must arrive with t = 1, 2, ... in order.  In strict
    mode any bad line raises; otherwise it is counted, logged and skipped.
    """

    def __init__(self, source, layout=None, strict=False):
        self.source = source
        self.layout = layout
        self.strict = strict
        self.stats = IngestStats()
        self._last = {}

    def _problem(self, exc):
        if self.strict:
            raise exc
        self.stats.problems.append(str(exc))
        log.warning("skipping: %s", exc)

    def __iter__(self):
        fh, owned = _open(self.source)
        try:
            for lineno, text in enumerate(fh, 1):
                self.stats.lines += 1
                if not text.strip():
                    continue
                try:
                    obj = json.loads(text)
                    rec = parse_event(obj, lineno, self.layout, self.strict)
                except json.JSONDecodeError as exc:
                    self.stats.malformed += 1
                    self._problem(SchemaError(f"invalid JSON: {exc.msg}", lineno))
                    continue
                except SchemaError as exc:
                    self.stats.malformed += 1
                    self._problem(exc)
                    continue
                expect = self._last.get(rec.user_id, 0) + 1
                if rec.t != expect:
                    self.stats.out_of_order += 1
                    self._problem(SequencingError(
                        f"line {lineno}: user {rec.user_id} has t={rec.t}, expected {expect}"))
                    continue
                self._last[rec.user_id] = rec.t
                self.stats.records += 1
                yield rec
        finally:
            if owned:
                fh.close()


def ingest(source, layout=None, strict=False):
    return Ingest(source, layout, strict)


def infer_layout(source):
    """Layout implied by the first record: plain -> None, named -> tag count."""
    fh, owned = _open(source)
    try:
        for text in fh:
            if text.strip():
                obj = json.loads(text)
                if "x" in obj:
                    return None
                return CovariateLayout(n_tags=len(obj.get("tag", [])))
        return None
    finally:
        if owned:
            fh.close()


def event_object(rec, fields=None):
    obj = {"user_id": rec.user_id, "t": int(rec.t), "y": int(rec.y)}
    if fields is None:
        obj["x"] = [float(v) for v in rec.x]
        return obj
    for key in SCALAR_FIELDS:
        obj[key] = float(fields[key])
    for key in VECTOR_KEYS:
        obj[key] = [float(v) for v in fields[key]]
    if float(fields["day"]) != day_effect(rec.t):
        obj["day"] = float(fields["day"])
    return obj


def emit(records, sink, fields=None):
    """Write records as JSONL; ``fields`` maps user -> raw covariates per t."""
    fh, owned = _open(sink, "w")
    try:
        for rec in records:
            raw = fields[rec.user_id][rec.t - 1] if fields else None
            fh.write(json.dumps(event_object(rec, raw)) + "\n")
    finally:
        if owned:
            fh.close()


# --- side files ---------------------------------------------------------------------

def write_demographics(demo, sink):
    fh, owned = _open(sink, "w")
    try:
        for uid in sorted(demo):
            fh.write(json.dumps({"user_id": uid, "D": [float(v) for v in demo[uid]]}) + "\n")
    finally:
        if owned:
            fh.close()


def read_demographics(source):
    out = {}
    fh, owned = _open(source)
    try:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict) or not isinstance(obj.get("user_id"), str) \
                    or not isinstance(obj.get("D"), list):
                raise SchemaError("demographics lines need user_id and a D list", lineno)
            D = np.asarray(obj["D"], dtype=float)
            if not np.all(np.isfinite(D)):
                raise SchemaError("demographics must be finite", lineno)
            out[obj["user_id"]] = D
    finally:
        if owned:
            fh.close()
    return out


def write_truth(dataset, sink):
    fh, owned = _open(sink, "w")
    try:
        fh.write(json.dumps({"user_id": None, "Delta": np.asarray(dataset.Delta).tolist()}) + "\n")
        for uid in dataset.users():
            tr = dataset.truth[uid]
            fh.write(json.dumps({
                "user_id": uid, "segment": int(tr["segment"]),
                "states": np.asarray(tr["states"]).tolist(),
                "Lambda": np.asarray(tr["Lambda"]).tolist(),
                "Gamma": np.asarray(tr["Gamma"]).tolist()}) + "\n")
    finally:
        if owned:
            fh.close()


def read_truth(source):
    out, Delta = {}, None
    fh, owned = _open(source)
    try:
        for text in fh:
            if not text.strip():
                continue
            obj = json.loads(text)
            if obj.get("user_id") is None:
                Delta = np.asarray(obj["Delta"], dtype=float)
                continue
            out[obj["user_id"]] = {"segment": obj["segment"], "states": np.asarray(obj["states"]),
                                   "Lambda": np.asarray(obj["Lambda"]), "Gamma": np.asarray(obj["Gamma"])}
    finally:
        if owned:
            fh.close()
    return out, Delta


# --- checkpoints --------------------------------------------------------------------

MAGIC = b"IHMMCKPT"
VERSION = 1
_HEADER = struct.Struct(">8sI32s")


def save_checkpoint(path, state, version=VERSION):
    """Write ``state`` atomically: temp file in the same directory, fsync, rename."""
    payload = pickle.dumps(state, protocol=pickle.HIGHEST_PROTOCOL)
    blob = _HEADER.pack(MAGIC, version, hashlib.sha256(payload).digest()) + payload
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CorruptCheckpointError(f"{path}: truncated header")
    magic, version, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {VERSION}")
    payload = blob[_HEADER.size:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptCheckpointError(f"{path}: content hash mismatch")
    return pickle.loads(payload)
