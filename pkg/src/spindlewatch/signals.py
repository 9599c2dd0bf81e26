"""Deterministic synthetic spindle telemetry.

Every 0.1 s block is synthesized from an RNG keyed by (seed, block_index), so
streams are bit-identical across runs and blocks can be produced in any order
or chunk size. A block contains:

  * band-limited Gaussian noise on all four accelerometer channels
    (synthesized in the frequency domain, so the band edge is exact);
  * spindle-harmonic tones (1x..3x) while a schedule entry is cutting;
  * anomaly tones with a hard on/off envelope: chatter at a scripted
    asynchronous frequency, unbalance growth at 1x spindle frequency,
    bearing defects at defect_order x spindle frequency;
  * cutting power that sits near the entry's level during cuts and near the
    idle level otherwise.

Draw order per block is fixed: channel noise first, then power noise.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .models import (
    BLOCK_SAMPLES,
    BLOCK_SECONDS,
    IDLE_TOOL,
    N_CHANNELS,
    SAMPLE_RATE,
    ContextSample,
    SignalBlock,
)
from .scenario import ScenarioScript, resolve_script

_NYQUIST_BINS = BLOCK_SAMPLES // 2          # active bins available below Nyquist
_BIN_HZ = SAMPLE_RATE / BLOCK_SAMPLES       # 10 Hz


def _noise_bins(bandwidth_hz: float) -> int:
    return min(_NYQUIST_BINS, max(1, int(round(bandwidth_hz / _BIN_HZ))))


def _tone_template(freq: float, amplitude: float) -> Optional[np.ndarray]:
    """Block-periodic tone waveform, or None when the phase does not repeat."""
    cycles = freq * BLOCK_SECONDS
    if abs(cycles - round(cycles)) > 1e-9:
        return None
    n = np.arange(BLOCK_SAMPLES)
    return amplitude * np.sin(2.0 * np.pi * freq * n / SAMPLE_RATE)


def _tone_direct(freq: float, amplitude: float, block_index: int) -> np.ndarray:
    m = block_index * BLOCK_SAMPLES + np.arange(BLOCK_SAMPLES)
    return amplitude * np.sin(2.0 * np.pi * freq * m / SAMPLE_RATE)


def _block_tones(script: ScenarioScript, block_index: int, entry_idx: int) -> list[tuple[float, float]]:
    """(frequency, amplitude) pairs active during a block."""
    tones: list[tuple[float, float]] = []
    if entry_idx < 0:
        return tones
    entry = script.schedule[entry_idx]
    f_s = entry.spindle_speed / 60.0
    for k, amp in enumerate(script.settings.harmonic_amplitudes, start=1):
        if amp > 0.0:
            tones.append((k * f_s, amp))
    t0 = block_index * BLOCK_SECONDS
    t1 = t0 + BLOCK_SECONDS
    for a in script.anomalies:
        if a.start <= t0 + 1e-9 and t1 <= a.end + 1e-9:
            if a.kind == "chatter":
                tones.append((float(a.frequency_hz), a.magnitude))
            elif a.kind == "unbalance_growth":
                tones.append((f_s, a.magnitude))
            elif a.kind == "bearing_defect":
                tones.append((float(a.defect_order) * f_s, a.magnitude))
    return tones


def _generate_chunk(script: ScenarioScript, b0: int, b1: int) -> tuple[np.ndarray, np.ndarray]:
    """Channels (B, 4, 2500) and power (B, 2500) for blocks [b0, b1)."""
    from .scenario import block_entry_index

    settings = script.settings
    nblocks = b1 - b0
    k_noise = _noise_bins(settings.noise_bandwidth_hz)
    white = k_noise >= _NYQUIST_BINS
    power = np.empty((nblocks, BLOCK_SAMPLES))

    if white:
        channels = np.empty((nblocks, N_CHANNELS, BLOCK_SAMPLES))
        for i, b in enumerate(range(b0, b1)):
            rng = np.random.default_rng([script.seed, b])
            channels[i] = rng.standard_normal((N_CHANNELS, BLOCK_SAMPLES))
            channels[i] *= settings.noise_std
            power[i] = rng.standard_normal(BLOCK_SAMPLES)
    else:
        scale = settings.noise_std * BLOCK_SAMPLES / (2.0 * math.sqrt(k_noise))
        spectra = np.zeros((nblocks, N_CHANNELS, _NYQUIST_BINS + 1), dtype=complex)
        for i, b in enumerate(range(b0, b1)):
            rng = np.random.default_rng([script.seed, b])
            # Interleaved normals viewed as complex: one draw per block.
            z = rng.standard_normal((N_CHANNELS, 2 * k_noise)).view(np.complex128)
            z *= scale
            spectra[i, :, 1:k_noise + 1] = z
            power[i] = rng.standard_normal(BLOCK_SAMPLES)
        channels = np.fft.irfft(spectra, BLOCK_SAMPLES, axis=-1)

    # Tones and power levels are constant over runs of blocks inside one
    # schedule entry; combine each run's periodic tones into a single
    # waveform so the chunk is touched once.
    template_cache: dict[tuple[float, float], Optional[np.ndarray]] = {}
    i = 0
    while i < nblocks:
        b = b0 + i
        entry_idx = block_entry_index(script, b)
        tones = _block_tones(script, b, entry_idx)
        j = i + 1
        while j < nblocks and block_entry_index(script, b0 + j) == entry_idx \
                and _block_tones(script, b0 + j, entry_idx) == tones:
            j += 1
        combined = None
        for freq, amp in tones:
            key = (freq, amp)
            if key not in template_cache:
                template_cache[key] = _tone_template(freq, amp)
            template = template_cache[key]
            if template is not None:
                combined = template.copy() if combined is None else combined + template
            else:
                for k in range(i, j):
                    channels[k] += _tone_direct(freq, amp, b0 + k)
        if combined is not None:
            channels[i:j] += combined
        level = settings.idle_power_w if entry_idx < 0 else script.schedule[entry_idx].cutting_power_w
        power[i:j] *= settings.power_noise_std_w
        power[i:j] += level
        i = j
    np.maximum(power, 0.0, out=power)

    return channels, power


def iter_blocks(script: ScenarioScript, chunk_blocks: int = 64) -> Iterator[SignalBlock]:
    script = resolve_script(script)
    n = script.n_blocks
    for b0 in range(0, n, chunk_blocks):
        b1 = min(b0 + chunk_blocks, n)
        channels, power = _generate_chunk(script, b0, b1)
        for i, b in enumerate(range(b0, b1)):
            yield SignalBlock(block_index=b, start_time=b * BLOCK_SECONDS,
                              channels=channels[i], power=power[i])


def iter_context(script: ScenarioScript) -> Iterator[ContextSample]:
    from .scenario import block_entry_index

    script = resolve_script(script)
    settings = script.settings
    temp = settings.temperature_base_c
    alpha = BLOCK_SECONDS / settings.temperature_tau_s
    travel = settings.axis_travel_mm
    axis_rates = (1.0, 0.6, 0.25)

    for b in range(script.n_blocks):
        t = b * BLOCK_SECONDS
        entry_idx = block_entry_index(script, b)
        if entry_idx >= 0:
            entry = script.schedule[entry_idx]
            elapsed = t - entry.start
            mm_per_s = entry.feedrate / 60.0
            axes = tuple(round((mm_per_s * rate * elapsed) % travel, 6) for rate in axis_rates)
            sample = ContextSample(
                time=t, axis_position=axes, feedrate=entry.feedrate,
                spindle_speed=entry.spindle_speed, tool_id=entry.tool_id,
                program_name=entry.program_name, workpiece_id=entry.workpiece_id,
                spindle_temperature=round(temp, 6),
            )
            target = settings.temperature_base_c + settings.temperature_cut_rise_c
        else:
            sample = ContextSample(
                time=t, axis_position=(0.0, 0.0, 0.0), feedrate=0.0,
                spindle_speed=0.0, tool_id=IDLE_TOOL, program_name="",
                workpiece_id="", spindle_temperature=round(temp, 6),
            )
            target = settings.temperature_base_c
        temp += alpha * (target - temp)
        yield sample


def generate_stream(script: ScenarioScript) -> tuple[Iterator[SignalBlock], Iterator[ContextSample]]:
    """Lazy block and context streams for a validated scenario script."""
    script = resolve_script(script)
    return iter_blocks(script), iter_context(script)
