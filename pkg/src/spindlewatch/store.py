"""Append-only record store with snapshot reads.

On-disk layout under the store root (see docs/formats.md for the byte-exact
row schemas):

    manifest.json       row/byte counts per stream
    monitoring.log      MonitoringRecord rows
    smart_data.log      SmartDatum rows
    thresholds.log      Threshold rows
    indicators.log      DecisionAidIndicator rows
    context.log         ContextSample rows (written by `generate`)
    signal_debug.log    raw SignalBlock dump (opt-in; 25 kHz signals are not
                        persisted by default)

Every row is framed as

    u32 length | u8 schema version | payload | u32 crc32(version + payload)

with little-endian integers. A torn final frame (crash mid-append) fails the
length or checksum test and is truncated away the next time the store opens;
it is never silently parsed. Snapshots capture the byte offset at creation
time and therefore never observe later appends. Each stream has a single
writer; snapshot readers are unlimited.
"""

from __future__ import annotations

import json
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import SchemaError, StoreError, UnknownStreamError
from .models import (
    BLOCK_SAMPLES,
    N_CHANNELS,
    BaselineSpec,
    ContextSample,
    DecisionAidIndicator,
    InstantiationContext,
    ModeSpec,
    MonitoringRecord,
    ScopeFilter,
    SignalBlock,
    SmartDatum,
    Threshold,
    ToolUsagePeriod,
)

STREAMS = ("monitoring", "smart_data", "thresholds", "indicators", "context", "signal_debug")

_LEN = struct.Struct("<I")
_CRC = struct.Struct("<I")
_MAX_FRAME = 1 << 24


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 255:
        raise SchemaError(f"string field too long ({len(raw)} bytes)")
    return bytes([len(raw)]) + raw


def _unpack_str(buf: bytes, offset: int) -> tuple[str, int]:
    n = buf[offset]
    return buf[offset + 1:offset + 1 + n].decode("utf-8"), offset + 1 + n


def _require(mapping: dict, key: str, stream: str):
    if key not in mapping or mapping[key] is None:
        raise SchemaError(f"{stream}: missing required field '{key}'")
    return mapping[key]


def _finite(value: float, name: str, stream: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(f"{stream}: field '{name}' is not finite")
    return value


# --- monitoring ------------------------------------------------------------

_MON_FIXED = struct.Struct("<21d")
_MON_FIELDS = ("time", "vrms", "nh", "unbalance", "bearing", "mean_power", "tool_id",
               "program_name", "workpiece_id", "spindle_speed", "feedrate",
               "spindle_temperature")


def _encode_monitoring(row) -> bytes:
    if isinstance(row, dict):
        for name in _MON_FIELDS:
            _require(row, name, "monitoring")
        row = MonitoringRecord(**{name: row[name] for name in _MON_FIELDS})
    criteria = []
    for name in ("vrms", "nh", "unbalance", "bearing"):
        values = tuple(getattr(row, name))
        if len(values) != N_CHANNELS:
            raise SchemaError(f"monitoring: field '{name}' must hold {N_CHANNELS} values")
        for v in values:
            if not (v >= 0.0) or v == math.inf:
                raise SchemaError(f"monitoring: field '{name}' must be finite and >= 0")
        criteria.extend(values)
    fixed = _MON_FIXED.pack(_finite(row.time, "time", "monitoring"), *criteria,
                            _finite(row.mean_power, "mean_power", "monitoring"),
                            _finite(row.spindle_speed, "spindle_speed", "monitoring"),
                            _finite(row.feedrate, "feedrate", "monitoring"),
                            _finite(row.spindle_temperature, "spindle_temperature", "monitoring"))
    return fixed + _pack_str(row.tool_id) + _pack_str(row.program_name) + _pack_str(row.workpiece_id)


def _decode_monitoring(payload: bytes) -> MonitoringRecord:
    vals = _MON_FIXED.unpack_from(payload, 0)
    off = _MON_FIXED.size
    tool, off = _unpack_str(payload, off)
    program, off = _unpack_str(payload, off)
    workpiece, off = _unpack_str(payload, off)
    return MonitoringRecord(
        time=vals[0], vrms=vals[1:5], nh=vals[5:9], unbalance=vals[9:13],
        bearing=vals[13:17], mean_power=vals[17], spindle_speed=vals[18],
        feedrate=vals[19], spindle_temperature=vals[20],
        tool_id=tool, program_name=program, workpiece_id=workpiece,
    )


# --- context ---------------------------------------------------------------

_CTX_FIXED = struct.Struct("<7d")


def _encode_context(row) -> bytes:
    if isinstance(row, dict):
        for name in ("time", "axis_position", "feedrate", "spindle_speed", "tool_id",
                     "program_name", "workpiece_id", "spindle_temperature"):
            _require(row, name, "context")
        row = ContextSample(time=row["time"], axis_position=tuple(row["axis_position"]),
                            feedrate=row["feedrate"], spindle_speed=row["spindle_speed"],
                            tool_id=row["tool_id"], program_name=row["program_name"],
                            workpiece_id=row["workpiece_id"],
                            spindle_temperature=row["spindle_temperature"])
    axes = tuple(row.axis_position)
    if len(axes) != 3:
        raise SchemaError("context: field 'axis_position' must hold 3 values")
    fixed = _CTX_FIXED.pack(_finite(row.time, "time", "context"), *axes,
                            _finite(row.feedrate, "feedrate", "context"),
                            _finite(row.spindle_speed, "spindle_speed", "context"),
                            _finite(row.spindle_temperature, "spindle_temperature", "context"))
    return fixed + _pack_str(row.tool_id) + _pack_str(row.program_name) + _pack_str(row.workpiece_id)


def _decode_context(payload: bytes) -> ContextSample:
    vals = _CTX_FIXED.unpack_from(payload, 0)
    off = _CTX_FIXED.size
    tool, off = _unpack_str(payload, off)
    program, off = _unpack_str(payload, off)
    workpiece, off = _unpack_str(payload, off)
    return ContextSample(time=vals[0], axis_position=vals[1:4], feedrate=vals[4],
                         spindle_speed=vals[5], spindle_temperature=vals[6],
                         tool_id=tool, program_name=program, workpiece_id=workpiece)


# --- signal debug dump -----------------------------------------------------

_SIG_FIXED = struct.Struct("<qd")


def _encode_signal(row) -> bytes:
    channels = np.asarray(row.channels, dtype=float)
    power = np.asarray(row.power, dtype=float)
    if channels.shape != (N_CHANNELS, BLOCK_SAMPLES) or power.shape != (BLOCK_SAMPLES,):
        raise SchemaError("signal_debug: bad channel or power shape")
    return (_SIG_FIXED.pack(int(row.block_index), float(row.start_time))
            + channels.tobytes() + power.tobytes())


def _decode_signal(payload: bytes) -> SignalBlock:
    block_index, start_time = _SIG_FIXED.unpack_from(payload, 0)
    off = _SIG_FIXED.size
    n = N_CHANNELS * BLOCK_SAMPLES * 8
    channels = np.frombuffer(payload[off:off + n]).reshape(N_CHANNELS, BLOCK_SAMPLES)
    power = np.frombuffer(payload[off + n:off + n + BLOCK_SAMPLES * 8])
    return SignalBlock(block_index=block_index, start_time=start_time,
                       channels=channels.copy(), power=power.copy())


# --- JSON-backed streams ---------------------------------------------------

def _dumps(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _threshold_to_mapping(t: Threshold) -> dict:
    return {"criterion_id": t.criterion_id, "value": t.value,
            "provenance": t.provenance, "learned_from": t.learned_from}


def _threshold_from_mapping(doc: dict) -> Threshold:
    value = float(_require(doc, "value", "thresholds"))
    if not value > 0:
        raise SchemaError("thresholds: field 'value' must be positive")
    provenance = _require(doc, "provenance", "thresholds")
    if provenance not in ("learned", "configured"):
        raise SchemaError(f"thresholds: field 'provenance' has unknown value '{provenance}'")
    return Threshold(criterion_id=str(_require(doc, "criterion_id", "thresholds")),
                     value=value, provenance=provenance,
                     learned_from=str(doc.get("learned_from", "")))


def _encode_threshold(row) -> bytes:
    doc = row if isinstance(row, dict) else _threshold_to_mapping(row)
    return _dumps(_threshold_to_mapping(_threshold_from_mapping(doc)))


def _decode_threshold(payload: bytes) -> Threshold:
    return _threshold_from_mapping(json.loads(payload))


def _period_to_mapping(p: ToolUsagePeriod) -> dict:
    return {"period_id": p.period_id, "machine_id": p.machine_id, "tool_id": p.tool_id,
            "t_i": p.t_i, "t_f": p.t_f, "programs": list(p.programs),
            "workpieces": list(p.workpieces)}


def _period_from_mapping(doc: dict, stream: str) -> ToolUsagePeriod:
    return ToolUsagePeriod(
        period_id=str(_require(doc, "period_id", stream)),
        machine_id=str(_require(doc, "machine_id", stream)),
        tool_id=str(_require(doc, "tool_id", stream)),
        t_i=_finite(_require(doc, "t_i", stream), "t_i", stream),
        t_f=_finite(_require(doc, "t_f", stream), "t_f", stream),
        programs=tuple(doc.get("programs", ())),
        workpieces=tuple(doc.get("workpieces", ())),
    )


def _smart_to_mapping(d: SmartDatum) -> dict:
    return {"period": _period_to_mapping(d.period), "metric_id": d.metric_id,
            "value": d.value, "operator": d.operator,
            "threshold": None if d.threshold_used is None
            else _threshold_to_mapping(d.threshold_used)}


def _smart_from_mapping(doc: dict) -> SmartDatum:
    operator = str(_require(doc, "operator", "smart_data"))
    threshold = doc.get("threshold")
    if operator in ("CO", "T") and threshold is None:
        raise SchemaError("smart_data: field 'threshold' required for CO/T metrics")
    value = _finite(_require(doc, "value", "smart_data"), "value", "smart_data")
    if operator in ("CO", "T") and value < 0:
        raise SchemaError("smart_data: field 'value' must be >= 0 for CO/T metrics")
    return SmartDatum(
        period=_period_from_mapping(_require(doc, "period", "smart_data"), "smart_data"),
        metric_id=str(_require(doc, "metric_id", "smart_data")),
        value=value, operator=operator,
        threshold_used=None if threshold is None else _threshold_from_mapping(threshold),
    )


def _encode_smart(row) -> bytes:
    doc = row if isinstance(row, dict) else _smart_to_mapping(row)
    return _dumps(_smart_to_mapping(_smart_from_mapping(doc)))


def _decode_smart(payload: bytes) -> SmartDatum:
    return _smart_from_mapping(json.loads(payload))


def _indicator_to_mapping(ind: DecisionAidIndicator) -> dict:
    ctx = ind.context
    return {
        "indicator_id": ind.indicator_id,
        "context": {
            "objective": ctx.objective,
            "decider": ctx.decider,
            "scope": {k: v for k, v in vars(ctx.scope).items() if v is not None},
            "mode": {k: v for k, v in vars(ctx.mode).items() if v is not None},
        },
        "kpi_results": {k: dict(sorted(v.items())) for k, v in sorted(ind.kpi_results.items())},
        "computed_at": ind.computed_at,
        "inputs_digest": ind.inputs_digest,
    }


def _indicator_from_mapping(doc: dict) -> DecisionAidIndicator:
    ctx = _require(doc, "context", "indicators")
    scope = ScopeFilter(**ctx.get("scope", {}))
    mode = ModeSpec(**_require(ctx, "mode", "indicators"))
    results = {}
    for kpi_id, mapping in _require(doc, "kpi_results", "indicators").items():
        results[kpi_id] = {entity: _finite(v, f"kpi_results[{kpi_id}][{entity}]", "indicators")
                           for entity, v in mapping.items()}
    return DecisionAidIndicator(
        indicator_id=str(_require(doc, "indicator_id", "indicators")),
        context=InstantiationContext(objective=str(_require(ctx, "objective", "indicators")),
                                     decider=str(_require(ctx, "decider", "indicators")),
                                     scope=scope, mode=mode),
        kpi_results=results,
        computed_at=_finite(_require(doc, "computed_at", "indicators"), "computed_at", "indicators"),
        inputs_digest=str(_require(doc, "inputs_digest", "indicators")),
    )


def _encode_indicator(row) -> bytes:
    doc = row if isinstance(row, dict) else _indicator_to_mapping(row)
    return _dumps(_indicator_to_mapping(_indicator_from_mapping(doc)))


def _decode_indicator(payload: bytes) -> DecisionAidIndicator:
    return _indicator_from_mapping(json.loads(payload))


@dataclass(frozen=True)
class _Codec:
    version: int
    encode: Callable
    decode: Callable


_CODECS: dict[str, _Codec] = {
    "monitoring": _Codec(1, _encode_monitoring, _decode_monitoring),
    "smart_data": _Codec(1, _encode_smart, _decode_smart),
    "thresholds": _Codec(1, _encode_threshold, _decode_threshold),
    "indicators": _Codec(1, _encode_indicator, _decode_indicator),
    "context": _Codec(1, _encode_context, _decode_context),
    "signal_debug": _Codec(1, _encode_signal, _decode_signal),
}


# --- filters ----------------------------------------------------------------

@dataclass(frozen=True)
class RowFilter:
    """Time-range and field-equality pushdown for snapshot scans.

    Time is inclusive at the start and exclusive at the end. Equality against
    a collection-valued field (programs, workpieces) tests membership.
    """

    time_start: Optional[float] = None
    time_end: Optional[float] = None
    equals: dict = field(default_factory=dict)


def _row_time(stream: str, row) -> Optional[float]:
    if stream in ("monitoring", "context"):
        return row.time
    if stream == "smart_data":
        return row.period.t_i
    if stream == "signal_debug":
        return row.start_time
    if stream == "indicators":
        return row.computed_at
    return None


def _row_field(stream: str, row, name: str):
    if stream == "smart_data":
        if name in ("machine_id", "tool_id", "t_i", "t_f"):
            return getattr(row.period, name)
        if name == "program":
            return row.period.programs
        if name == "workpiece":
            return row.period.workpieces
    try:
        return getattr(row, name)
    except AttributeError:
        raise StoreError(f"{stream}: no filterable field '{name}'") from None


def _matches(stream: str, row, where: RowFilter) -> bool:
    if where.time_start is not None or where.time_end is not None:
        t = _row_time(stream, row)
        if t is None:
            raise StoreError(f"{stream}: stream has no time axis to filter on")
        if where.time_start is not None and t < where.time_start:
            return False
        if where.time_end is not None and t >= where.time_end:
            return False
    for name, wanted in where.equals.items():
        value = _row_field(stream, row, name)
        if isinstance(value, (tuple, list, set, frozenset)):
            if wanted not in value:
                return False
        elif value != wanted:
            return False
    return True


@dataclass(frozen=True)
class StreamStats:
    rows: int
    bytes: int


class Snapshot:
    """Immutable point-in-time view over one stream."""

    def __init__(self, stream: str, path: Path, end_offset: int, rows: int,
                 where: Optional[RowFilter] = None):
        self.stream = stream
        self.row_count = rows
        self._path = path
        self._end = end_offset
        self._where = where

    def __iter__(self) -> Iterator:
        codec = _CODECS[self.stream]
        if not self._path.exists() or self._end == 0:
            return
        with self._path.open("rb") as fh:
            offset = 0
            while offset < self._end:
                frame = _read_frame(fh, self._end - offset)
                if frame is None:
                    raise StoreError(f"{self.stream}: corrupt frame inside committed region")
                version, payload, size = frame
                offset += size
                if version != codec.version:
                    raise StoreError(f"{self.stream}: unsupported schema version {version}")
                row = codec.decode(payload)
                if self._where is None or _matches(self.stream, row, self._where):
                    yield row

    def rows(self) -> list:
        return list(self)


def _read_frame(fh, remaining: int):
    """One frame as (version, payload, frame_size), or None if torn/invalid."""
    if remaining < _LEN.size:
        return None
    head = fh.read(_LEN.size)
    if len(head) < _LEN.size:
        return None
    (length,) = _LEN.unpack(head)
    if length < 1 or length > _MAX_FRAME or remaining < _LEN.size + length + _CRC.size:
        return None
    body = fh.read(length)
    tail = fh.read(_CRC.size)
    if len(body) < length or len(tail) < _CRC.size:
        return None
    (crc,) = _CRC.unpack(tail)
    if zlib.crc32(body) != crc:
        return None
    return body[0], body[1:], _LEN.size + length + _CRC.size


class RecordStore:
    """Append-only persistence for all pipeline streams (single writer each)."""

    def __init__(self, root, create: bool = True):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise StoreError(f"store root {self.root} does not exist")
        self._counts: dict[str, int] = {}
        self._bytes: dict[str, int] = {}
        self._last_offset: dict[str, int] = {}
        self._handles: dict = {}
        self._recover()

    # -- lifecycle

    def _manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def _path(self, stream: str) -> Path:
        return self.root / f"{stream}.log"

    def _recover(self) -> None:
        manifest = {}
        if self._manifest_path().exists():
            manifest = json.loads(self._manifest_path().read_text()).get("streams", {})
        for stream in STREAMS:
            path = self._path(stream)
            size = path.stat().st_size if path.exists() else 0
            noted = manifest.get(stream, {})
            if size and size == noted.get("bytes") and self._tail_intact(path, noted):
                self._counts[stream] = noted.get("rows", 0)
                self._bytes[stream] = size
                self._last_offset[stream] = noted.get("last_offset", 0)
                continue
            rows, good, last = self._scan(path)
            if path.exists() and good < size:
                with path.open("rb+") as fh:
                    fh.truncate(good)      # drop the torn tail before new appends
            self._counts[stream] = rows
            self._bytes[stream] = good
            self._last_offset[stream] = last
        self._write_manifest()

    @staticmethod
    def _tail_intact(path: Path, noted: dict) -> bool:
        """Verify the checksum of the final noted frame; a torn or corrupted
        tail forces a full rescan even when the byte count still matches."""
        last = noted.get("last_offset")
        size = noted.get("bytes", 0)
        if last is None or not 0 <= last < size:
            return size == 0
        with path.open("rb") as fh:
            fh.seek(last)
            frame = _read_frame(fh, size - last)
            return frame is not None and last + frame[2] == size

    def _scan(self, path: Path) -> tuple[int, int, int]:
        if not path.exists():
            return 0, 0, 0
        size = path.stat().st_size
        rows = 0
        offset = 0
        last = 0
        with path.open("rb") as fh:
            while True:
                frame = _read_frame(fh, size - offset)
                if frame is None:
                    break
                last = offset
                offset += frame[2]
                rows += 1
        return rows, offset, last

    def _write_manifest(self) -> None:
        doc = {"version": 1, "streams": {
            s: {"rows": self._counts[s], "bytes": self._bytes[s],
                "last_offset": self._last_offset[s]} for s in STREAMS}}
        tmp = self._manifest_path().with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
        os.replace(tmp, self._manifest_path())

    def close(self) -> None:
        for fh in self._handles.values():
            try:
                fh.flush()
                os.fsync(fh.fileno())
            except OSError:
                pass
            fh.close()
        self._handles.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- operations

    def _check_stream(self, stream: str) -> None:
        if stream not in STREAMS:
            raise UnknownStreamError(f"unknown stream '{stream}'")

    def append(self, stream: str, rows) -> int:
        self._check_stream(stream)
        codec = _CODECS[stream]
        frames = []
        for row in rows:
            payload = codec.encode(row)
            body = bytes([codec.version]) + payload
            frames.append(_LEN.pack(len(body)) + body + _CRC.pack(zlib.crc32(body)))
        if not frames:
            return 0
        blob = b"".join(frames)
        fh = self._handles.get(stream)
        if fh is None:
            fh = self._path(stream).open("ab")
            self._handles[stream] = fh
        try:
            fh.write(blob)
            fh.flush()
        except OSError as exc:
            raise StoreError(f"{stream}: append failed: {exc}") from exc
        self._counts[stream] += len(frames)
        self._last_offset[stream] = self._bytes[stream] + len(blob) - len(frames[-1])
        self._bytes[stream] += len(blob)
        self._write_manifest()
        return len(frames)

    def snapshot(self, stream: str, where: Optional[RowFilter] = None) -> Snapshot:
        self._check_stream(stream)
        return Snapshot(stream, self._path(stream), self._bytes[stream],
                        self._counts[stream], where)

    def stats(self, stream: str) -> StreamStats:
        self._check_stream(stream)
        return StreamStats(rows=self._counts[stream], bytes=self._bytes[stream])

    def all_stats(self) -> dict[str, StreamStats]:
        return {s: self.stats(s) for s in STREAMS}

    # -- CSV export (inspection format; column order is part of the contract)

    def export_csv(self, stream: str, path) -> int:
        import csv

        self._check_stream(stream)
        header, to_rows = _CSV_LAYOUT[stream]
        n = 0
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in self.snapshot(stream):
                for out in to_rows(row):
                    writer.writerow(out)
                    n += 1
        return n


def _monitoring_csv(r: MonitoringRecord):
    yield ([r.time, r.tool_id, r.program_name, r.workpiece_id, r.spindle_speed,
            r.feedrate, r.spindle_temperature, r.mean_power]
           + list(r.vrms) + list(r.nh) + list(r.unbalance) + list(r.bearing))


def _smart_csv(d: SmartDatum):
    p = d.period
    t = d.threshold_used
    yield [p.period_id, p.machine_id, p.tool_id, p.t_i, p.t_f,
           ";".join(p.programs), ";".join(p.workpieces),
           d.metric_id, d.operator, d.value,
           t.criterion_id if t else "", t.value if t else ""]


def _threshold_csv(t: Threshold):
    yield [t.criterion_id, t.value, t.provenance, t.learned_from]


def _indicator_csv(ind: DecisionAidIndicator):
    for kpi_id in sorted(ind.kpi_results):
        for entity, value in sorted(ind.kpi_results[kpi_id].items()):
            yield [ind.indicator_id, kpi_id, entity, value, ind.computed_at, ind.inputs_digest]


def _context_csv(c: ContextSample):
    yield [c.time, c.tool_id, c.program_name, c.workpiece_id, c.spindle_speed,
           c.feedrate, c.spindle_temperature, *c.axis_position]


_CSV_LAYOUT = {
    "monitoring": (
        ["time", "tool_id", "program_name", "workpiece_id", "spindle_speed", "feedrate",
         "spindle_temperature", "mean_power",
         "vrms_1", "vrms_2", "vrms_3", "vrms_4", "nh_1", "nh_2", "nh_3", "nh_4",
         "unbalance_1", "unbalance_2", "unbalance_3", "unbalance_4",
         "bearing_1", "bearing_2", "bearing_3", "bearing_4"],
        _monitoring_csv),
    "smart_data": (
        ["period_id", "machine_id", "tool_id", "t_i", "t_f", "programs", "workpieces",
         "metric_id", "operator", "value", "threshold_criterion", "threshold_value"],
        _smart_csv),
    "thresholds": (["criterion_id", "value", "provenance", "learned_from"], _threshold_csv),
    "indicators": (["indicator_id", "kpi_id", "entity", "value", "computed_at", "inputs_digest"],
                   _indicator_csv),
    "context": (["time", "tool_id", "program_name", "workpiece_id", "spindle_speed",
                 "feedrate", "spindle_temperature", "axis_x", "axis_y", "axis_z"],
                _context_csv),
    "signal_debug": (["block_index", "start_time"], lambda r: iter([[r.block_index, r.start_time]])),
}
