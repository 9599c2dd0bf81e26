"""Scenario scripts: the deterministic programme a synthetic machine follows.

A scenario is a UTF-8 YAML document (see docs/formats.md) with a seed, a
duration, an ordered cutting schedule and a list of planted anomaly events.
All schedule and anomaly times must fall on the 0.1 s block grid so that an
event either covers a signal block completely or not at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .errors import ScenarioError
from .models import BLOCK_SECONDS

ANOMALY_KINDS = ("chatter", "unbalance_growth", "bearing_defect")

# Spectral bin width of the downstream 2500-sample analysis window, Hz.
_BIN_HZ = 10.0


@dataclass(frozen=True)
class GeneratorSettings:
    """Knobs of the synthetic signal model."""

    noise_std: float = 1.0                  # m/s^2, baseline broadband level
    noise_bandwidth_hz: float = 10_000.0    # baseline noise is band-limited to this
    harmonic_amplitudes: tuple[float, ...] = (0.5, 0.5, 0.5)   # 1x..3x spindle
    idle_power_w: float = 500.0
    power_noise_std_w: float = 20.0
    temperature_base_c: float = 25.0
    temperature_cut_rise_c: float = 8.0
    temperature_tau_s: float = 300.0
    axis_travel_mm: float = 500.0


@dataclass(frozen=True)
class ScheduleEntry:
    tool_id: str
    program_name: str
    workpiece_id: str
    start: float
    end: float
    spindle_speed: float        # rev/min
    feedrate: float             # mm/min
    cutting_power_w: Optional[float] = None     # drawn from the seed when None


@dataclass(frozen=True)
class AnomalyEvent:
    kind: str
    start: float
    end: float
    magnitude: float            # m/s^2 added at the target frequency
    frequency_hz: Optional[float] = None    # chatter only
    defect_order: Optional[float] = None    # bearing_defect only


@dataclass
class ScenarioScript:
    seed: int
    duration: float
    schedule: list[ScheduleEntry] = field(default_factory=list)
    anomalies: list[AnomalyEvent] = field(default_factory=list)
    settings: GeneratorSettings = field(default_factory=GeneratorSettings)

    @property
    def n_blocks(self) -> int:
        return int(round(self.duration / BLOCK_SECONDS))


def _on_grid(t: float) -> bool:
    return abs(t * 10.0 - round(t * 10.0)) < 1e-9


def _entry_covering(schedule: list[ScheduleEntry], start: float, end: float) -> Optional[int]:
    for i, e in enumerate(schedule):
        if e.start <= start and end <= e.end:
            return i
    return None


def validate_script(script: ScenarioScript) -> None:
    """Raise ScenarioError on the first violated invariant, naming the culprit."""
    if script.duration < 0:
        raise ScenarioError("duration must be >= 0")
    if not _on_grid(script.duration):
        raise ScenarioError("duration must align to the 0.1 s block grid")

    prev_end = None
    prev_idx = None
    for i, e in enumerate(script.schedule):
        if e.end <= e.start:
            raise ScenarioError(f"schedule entry {i}: end must be greater than start")
        for t, name in ((e.start, "start"), (e.end, "end")):
            if not _on_grid(t):
                raise ScenarioError(f"schedule entry {i}: {name} must align to the 0.1 s block grid")
        if e.start < 0 or e.end > script.duration + 1e-9:
            raise ScenarioError(f"schedule entry {i}: interval outside scenario duration")
        if e.spindle_speed <= 0:
            raise ScenarioError(f"schedule entry {i}: spindle_speed must be positive during a cut")
        if e.feedrate < 0:
            raise ScenarioError(f"schedule entry {i}: feedrate must be >= 0")
        if prev_end is not None and e.start < prev_end - 1e-9:
            raise ScenarioError(f"schedule entries {prev_idx} and {i} overlap or are out of order")
        prev_end, prev_idx = e.end, i

    for j, a in enumerate(script.anomalies):
        if a.kind not in ANOMALY_KINDS:
            raise ScenarioError(f"anomaly {j}: unknown kind '{a.kind}'")
        if a.end <= a.start:
            raise ScenarioError(f"anomaly {j}: end must be greater than start")
        if a.magnitude <= 0:
            raise ScenarioError(f"anomaly {j}: magnitude must be positive")
        if a.start < 0 or a.end > script.duration + 1e-9:
            raise ScenarioError(f"anomaly {j}: interval outside scenario duration")
        entry_idx = _entry_covering(script.schedule, a.start, a.end)
        if entry_idx is None:
            raise ScenarioError(f"anomaly {j}: interval not covered by a single schedule entry")
        entry = script.schedule[entry_idx]
        f_s = entry.spindle_speed / 60.0
        if a.kind == "chatter":
            if a.frequency_hz is None or a.frequency_hz <= 0:
                raise ScenarioError(f"anomaly {j}: chatter requires a positive frequency_hz")
            # Chatter must be asynchronous: stay clear of every spindle harmonic.
            k = round(a.frequency_hz / f_s)
            if k >= 1 and abs(a.frequency_hz - k * f_s) <= _BIN_HZ:
                raise ScenarioError(
                    f"anomaly {j}: chatter frequency {a.frequency_hz} Hz is within one bin "
                    f"of spindle harmonic {k} x {f_s:g} Hz"
                )
        elif a.kind == "bearing_defect":
            if a.defect_order is None or a.defect_order <= 0:
                raise ScenarioError(f"anomaly {j}: bearing_defect requires a positive defect_order")


def resolve_script(script: ScenarioScript) -> ScenarioScript:
    """Validate and fill in seed-drawn defaults (cutting power per entry)."""
    import numpy as np

    validate_script(script)
    schedule = []
    for i, e in enumerate(script.schedule):
        if e.cutting_power_w is None:
            rng = np.random.default_rng([script.seed, 0x50F7, i])
            e = replace(e, cutting_power_w=float(rng.uniform(4000.0, 12000.0)))
        schedule.append(e)
    return replace(script, schedule=schedule)


# --- YAML round-trip -------------------------------------------------------

def _script_to_mapping(script: ScenarioScript) -> dict:
    doc: dict = {
        "seed": script.seed,
        "duration": script.duration,
        "schedule": [
            {
                "tool": e.tool_id,
                "program": e.program_name,
                "workpiece": e.workpiece_id,
                "start": e.start,
                "end": e.end,
                "spindle_speed": e.spindle_speed,
                "feedrate": e.feedrate,
                **({"cutting_power_w": e.cutting_power_w} if e.cutting_power_w is not None else {}),
            }
            for e in script.schedule
        ],
        "anomalies": [
            {
                "kind": a.kind,
                "start": a.start,
                "end": a.end,
                "magnitude": a.magnitude,
                **({"frequency_hz": a.frequency_hz} if a.frequency_hz is not None else {}),
                **({"defect_order": a.defect_order} if a.defect_order is not None else {}),
            }
            for a in script.anomalies
        ],
    }
    defaults = GeneratorSettings()
    if script.settings != defaults:
        gen = {}
        for name in defaults.__dataclass_fields__:
            val = getattr(script.settings, name)
            if val != getattr(defaults, name):
                gen[name] = list(val) if isinstance(val, tuple) else val
        doc["generator"] = gen
    return doc


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing required field '{key}'")
    return mapping[key]


def script_from_mapping(doc: dict) -> ScenarioScript:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    seed = int(_require(doc, "seed", "scenario"))
    duration = float(_require(doc, "duration", "scenario"))

    schedule = []
    for i, raw in enumerate(doc.get("schedule") or []):
        where = f"schedule entry {i}"
        schedule.append(ScheduleEntry(
            tool_id=str(_require(raw, "tool", where)),
            program_name=str(_require(raw, "program", where)),
            workpiece_id=str(_require(raw, "workpiece", where)),
            start=float(_require(raw, "start", where)),
            end=float(_require(raw, "end", where)),
            spindle_speed=float(_require(raw, "spindle_speed", where)),
            feedrate=float(_require(raw, "feedrate", where)),
            cutting_power_w=None if raw.get("cutting_power_w") is None else float(raw["cutting_power_w"]),
        ))

    anomalies = []
    for j, raw in enumerate(doc.get("anomalies") or []):
        where = f"anomaly {j}"
        kind = str(_require(raw, "kind", where))
        if kind not in ANOMALY_KINDS:
            raise ScenarioError(f"{where}: unknown kind '{kind}'")
        anomalies.append(AnomalyEvent(
            kind=kind,
            start=float(_require(raw, "start", where)),
            end=float(_require(raw, "end", where)),
            magnitude=float(_require(raw, "magnitude", where)),
            frequency_hz=None if raw.get("frequency_hz") is None else float(raw["frequency_hz"]),
            defect_order=None if raw.get("defect_order") is None else float(raw["defect_order"]),
        ))

    settings = GeneratorSettings()
    gen = doc.get("generator") or {}
    if gen:
        known = set(GeneratorSettings.__dataclass_fields__)
        for key in gen:
            if key not in known:
                raise ScenarioError(f"generator: unknown setting '{key}'")
        if "harmonic_amplitudes" in gen:
            gen = dict(gen, harmonic_amplitudes=tuple(float(v) for v in gen["harmonic_amplitudes"]))
        settings = GeneratorSettings(**gen)

    script = ScenarioScript(seed=seed, duration=duration, schedule=schedule,
                            anomalies=anomalies, settings=settings)
    validate_script(script)
    return script


def write_scenario(script: ScenarioScript, path) -> None:
    validate_script(script)
    text = yaml.safe_dump(_script_to_mapping(script), sort_keys=False)
    Path(path).write_text(text, encoding="utf-8")


def read_scenario(path) -> ScenarioScript:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"cannot parse scenario file{loc}: {exc}") from exc
    return script_from_mapping(doc)


def schedule_entry_at(script: ScenarioScript, t: float) -> Optional[ScheduleEntry]:
    """Schedule entry active at time t, or None when the machine idles."""
    for e in script.schedule:
        if e.start <= t + 1e-9 and t < e.end - 1e-9:
            return e
        if e.start > t:
            break
    return None


def block_entry_index(script: ScenarioScript, block_index: int) -> int:
    """Index of the schedule entry covering a block, or -1 for idle.

    Blocks never straddle entry boundaries because schedule times are
    grid-aligned; membership is decided at the block midpoint.
    """
    mid = (block_index + 0.5) * BLOCK_SECONDS
    for i, e in enumerate(script.schedule):
        if e.start <= mid < e.end:
            return i
        if e.start > mid:
            break
    return -1
