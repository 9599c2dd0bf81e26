import numpy as np
import pytest

from spindlewatch.models import BLOCK_SAMPLES, SAMPLE_RATE, ContextSample, MonitoringRecord
from spindlewatch.scenario import AnomalyEvent, ScenarioScript, ScheduleEntry


def tone(freq_hz: float, amplitude: float, n: int = BLOCK_SAMPLES,
         phase: float = 0.0) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    return amplitude * np.sin(2.0 * np.pi * freq_hz * t + phase)


def make_context(time=0.0, tool="T1", program="P1", workpiece="W1",
                 spindle_speed=24000.0, feedrate=3000.0, temperature=25.0) -> ContextSample:
    return ContextSample(time=time, axis_position=(0.0, 0.0, 0.0), feedrate=feedrate,
                         spindle_speed=spindle_speed, tool_id=tool, program_name=program,
                         workpiece_id=workpiece, spindle_temperature=temperature)


def make_record(time, tool="T1", program="P1", workpiece="W1", nh=0.1, vrms=1.0,
                unbalance=0.5, bearing=0.1, power=8000.0, spindle_speed=24000.0,
                feedrate=3000.0, temperature=25.0) -> MonitoringRecord:
    quad = lambda v: (v, v, v, v)
    return MonitoringRecord(time=time, vrms=quad(vrms), nh=quad(nh),
                            unbalance=quad(unbalance), bearing=quad(bearing),
                            mean_power=power, tool_id=tool, program_name=program,
                            workpiece_id=workpiece, spindle_speed=spindle_speed,
                            feedrate=feedrate, spindle_temperature=temperature)


def one_tool_script(duration=10.0, seed=1, rpm=24000.0, power=8000.0,
                    anomalies=(), settings=None) -> ScenarioScript:
    kwargs = {} if settings is None else {"settings": settings}
    return ScenarioScript(
        seed=seed, duration=duration,
        schedule=[ScheduleEntry("T1", "P1", "W1", 0.0, duration, rpm, 3000.0, power)],
        anomalies=list(anomalies), **kwargs)


def chatter_event(start, end, magnitude=30.0, freq=3170.0) -> AnomalyEvent:
    return AnomalyEvent(kind="chatter", start=start, end=end, magnitude=magnitude,
                        frequency_hz=freq)


@pytest.fixture
def mini_config_mapping():
    """Small two-tool pipeline config with one planted chatter burst."""
    return {
        "machine_id": "M1",
        "scenario": {
            "seed": 7,
            "duration": 30.0,
            "schedule": [
                {"tool": "A", "program": "P1", "workpiece": "W1", "start": 0.0, "end": 12.0,
                 "spindle_speed": 24000.0, "feedrate": 3000.0, "cutting_power_w": 8000.0},
                {"tool": "B", "program": "P2", "workpiece": "W2", "start": 20.0, "end": 30.0,
                 "spindle_speed": 18000.0, "feedrate": 2000.0, "cutting_power_w": 6000.0},
            ],
            "anomalies": [
                {"kind": "chatter", "start": 4.0, "end": 6.0, "magnitude": 30.0,
                 "frequency_hz": 3170.0},
            ],
        },
        "thresholds": {"mode": "fixed", "fixed": {"nh": 20.0, "vrms": 15.0}},
    }
