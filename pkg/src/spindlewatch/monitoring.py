"""Level-1 processing: monitoring criteria from each 0.1 s signal block.

Order tracking is done per block in the frequency domain: a fixed 2500-sample
amplitude spectrum (10 Hz bins) with harmonic-bin masks keyed to the spindle
speed of the joined context sample. The speed is constant within a scripted
cut, so the block is treated as quasi-stationary and no angular resampling is
performed.

Criteria per accelerometer channel:
  vrms       band-limited RMS vibration level
  nh         largest asynchronous bin magnitude (chatter indicator)
  unbalance  peak magnitude within one bin of the spindle frequency
  bearing    peak magnitude within one bin of defect_order x spindle frequency

While the spindle is stopped there is no rotation to track: unbalance and
bearing are reported as 0 and nh degrades to the plain in-band maximum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, CriterionError, SignalError
from .models import (
    BLOCK_SAMPLES,
    N_CHANNELS,
    SAMPLE_RATE,
    ContextSample,
    MonitoringRecord,
    SignalBlock,
    SpectralWindow,
)

BIN_HZ = SAMPLE_RATE / BLOCK_SAMPLES        # 10 Hz
NYQUIST_HZ = SAMPLE_RATE / 2.0
_N_BINS = BLOCK_SAMPLES // 2 + 1

WINDOW_KINDS = ("rect", "hann")


@dataclass(frozen=True)
class MonitorSettings:
    """Signal-processing knobs, tunable per workpiece/tool from the config."""

    window: str = "rect"
    bandwidth_hz: float = 10_000.0
    bandwidth_overrides: dict = field(default_factory=dict)     # workpiece_id -> Hz
    tooth_counts: dict = field(default_factory=dict)            # tool_id -> teeth
    default_tooth_count: int = 2
    defect_orders: dict = field(default_factory=dict)           # tool_id -> order
    default_defect_order: float = 4.9
    harmonic_guard_bins: int = 1

    def bandwidth_for(self, workpiece_id: str) -> float:
        return float(self.bandwidth_overrides.get(workpiece_id, self.bandwidth_hz))

    def tooth_count_for(self, tool_id: str) -> int:
        return int(self.tooth_counts.get(tool_id, self.default_tooth_count))

    def defect_order_for(self, tool_id: str) -> float:
        return float(self.defect_orders.get(tool_id, self.default_defect_order))


def _check_samples(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (BLOCK_SAMPLES,):
        raise SignalError(f"expected {BLOCK_SAMPLES} samples, got shape {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise SignalError("signal contains non-finite samples")
    return samples


def _amplitudes(fft: np.ndarray, coherent_gain: float) -> np.ndarray:
    """One-sided amplitude calibration: a sinusoid of amplitude A reads A."""
    amp = np.abs(fft) * (2.0 / coherent_gain)
    amp[..., 0] *= 0.5
    amp[..., -1] *= 0.5
    return amp


def spectrum(samples: np.ndarray, window: str = "rect") -> SpectralWindow:
    """Amplitude spectrum of one block channel."""
    samples = _check_samples(samples)
    if window == "rect":
        fft = np.fft.rfft(samples)
        gain = float(BLOCK_SAMPLES)
    elif window == "hann":
        w = np.hanning(BLOCK_SAMPLES)
        fft = np.fft.rfft(samples * w)
        gain = float(w.sum())
    else:
        raise SignalError(f"unknown window kind '{window}'")
    return SpectralWindow(bin_magnitudes=_amplitudes(fft, gain), bin_width=BIN_HZ,
                          window_kind=window)


def compute_vrms(samples: np.ndarray, bandwidth_hz: float) -> float:
    """RMS of the signal band-limited to [0, bandwidth_hz]."""
    samples = _check_samples(samples)
    if not 0.0 < bandwidth_hz <= NYQUIST_HZ:
        raise CriterionError(f"bandwidth {bandwidth_hz} Hz outside (0, {NYQUIST_HZ}]")
    fft = np.fft.rfft(samples)
    return float(_band_rms(np.abs(fft)[np.newaxis, :], bandwidth_hz)[0])


def _band_rms(fft_mag: np.ndarray, bandwidth_hz: float) -> np.ndarray:
    """Parseval band RMS from raw (rectangular) FFT magnitudes, rows x bins."""
    return _band_rms_from_sq(fft_mag**2, bandwidth_hz)


def _band_rms_from_sq(sq: np.ndarray, bandwidth_hz: float) -> np.ndarray:
    k_max = min(int(bandwidth_hz / BIN_HZ), _N_BINS - 1)
    mean_square = sq[..., 0] + 2.0 * sq[..., 1:k_max + 1].sum(axis=-1)
    if k_max == _N_BINS - 1:
        mean_square -= sq[..., -1]      # Nyquist bin has no mirror image
    return np.sqrt(mean_square) / BLOCK_SAMPLES


def _peak_near(magnitudes: np.ndarray, freq_hz: float, guard: int) -> float:
    target = int(round(freq_hz / BIN_HZ))
    if target >= magnitudes.shape[-1]:
        raise CriterionError(f"target frequency {freq_hz:g} Hz above analyzed band")
    lo = max(0, target - guard)
    return float(magnitudes[..., lo:target + guard + 1].max())


def unbalance_criterion(spec: SpectralWindow, spindle_speed: float) -> float:
    """Peak magnitude within one bin of the spindle frequency (1x component)."""
    if spindle_speed <= 0:
        raise CriterionError("spindle stopped: unbalance undefined for spindle_speed <= 0")
    return _peak_near(spec.bin_magnitudes, spindle_speed / 60.0, guard=1)


def _harmonic_mask(n_bins: int, f_s: float, bandwidth_hz: float, guard: int) -> np.ndarray:
    """True for bins usable in the asynchronous search below bandwidth_hz."""
    k_max = min(int(bandwidth_hz / BIN_HZ), n_bins - 1)
    mask = np.zeros(n_bins, dtype=bool)
    mask[:k_max + 1] = True
    harmonic = f_s
    while harmonic <= bandwidth_hz + BIN_HZ:
        b = int(round(harmonic / BIN_HZ))
        mask[max(0, b - guard):b + guard + 1] = False
        harmonic += f_s
    return mask


def chatter_criterion_nh(spec: SpectralWindow, spindle_speed: float,
                         tooth_count: int, bandwidth_hz: float) -> float:
    """Largest bin magnitude below bandwidth_hz, spindle harmonics excluded.

    Excluding every harmonic of the spindle frequency also removes the
    tooth-passing components (tooth_count x spindle frequency and multiples),
    so tooth_count only participates in argument validation.
    """
    if spindle_speed <= 0:
        raise CriterionError("spindle stopped: Nh undefined for spindle_speed <= 0")
    if tooth_count < 1:
        raise CriterionError(f"tooth_count must be >= 1, got {tooth_count}")
    if not 0.0 < bandwidth_hz <= NYQUIST_HZ:
        raise CriterionError(f"bandwidth {bandwidth_hz} Hz outside (0, {NYQUIST_HZ}]")
    mags = spec.bin_magnitudes
    mask = _harmonic_mask(mags.shape[-1], spindle_speed / 60.0, bandwidth_hz,
                          guard=1)
    if not mask.any():
        return 0.0
    return float(mags[..., mask].max())


def bearing_criterion(spec: SpectralWindow, spindle_speed: float, defect_order: float) -> float:
    """Peak magnitude within one bin of defect_order x spindle frequency."""
    if spindle_speed <= 0:
        raise CriterionError("spindle stopped: bearing criterion undefined for spindle_speed <= 0")
    if defect_order <= 0:
        raise CriterionError(f"defect_order must be positive, got {defect_order}")
    return _peak_near(spec.bin_magnitudes, defect_order * spindle_speed / 60.0, guard=1)


def process_block(block: SignalBlock, ctx: ContextSample,
                  settings: MonitorSettings = MonitorSettings()) -> MonitoringRecord:
    """Compute one monitoring record from an aligned block/context pair."""
    records = process_chunk(np.asarray(block.channels)[np.newaxis],
                            np.asarray(block.power)[np.newaxis],
                            [block.start_time], [ctx], settings)
    return records[0]


def process_chunk(channels: np.ndarray, power: np.ndarray, times, contexts,
                  settings: MonitorSettings = MonitorSettings()) -> list[MonitoringRecord]:
    """Batched monitoring of aligned blocks: channels (B, 4, 2500), power (B, 2500).

    Criterion parameters are constant over runs of blocks sharing the same
    context (spindle speed, tool, workpiece), so spectra are computed in one
    batch and the criteria are evaluated run-wise.
    """
    n = channels.shape[0]
    for t, ctx in zip(times, contexts):
        if abs(t - ctx.time) >= 0.05:
            raise AlignmentError(
                f"block at {t:g} s does not align with context at {ctx.time:g} s")

    raw_fft = np.fft.rfft(channels.reshape(n * N_CHANNELS, BLOCK_SAMPLES), axis=-1)
    raw_fft = raw_fft.reshape(n, N_CHANNELS, -1)
    raw_mag = np.abs(raw_fft)
    band_sq = raw_mag**2
    if settings.window == "rect":
        # Reuse the magnitude buffer: vrms only needs the squares, computed above.
        amps = raw_mag
        amps *= 2.0 / BLOCK_SAMPLES
        amps[..., 0] *= 0.5
        amps[..., -1] *= 0.5
    elif settings.window == "hann":
        w = np.hanning(BLOCK_SAMPLES)
        win_fft = np.fft.rfft((channels * w).reshape(n * N_CHANNELS, BLOCK_SAMPLES), axis=-1)
        amps = _amplitudes(win_fft.reshape(n, N_CHANNELS, -1), float(w.sum()))
    else:
        raise SignalError(f"unknown window kind '{settings.window}'")
    n_bins = amps.shape[-1]
    mean_power = power.mean(axis=-1)
    guard = settings.harmonic_guard_bins

    records: list[MonitoringRecord] = []
    i = 0
    while i < n:
        ctx = contexts[i]
        key = (ctx.spindle_speed, ctx.tool_id, ctx.workpiece_id)
        j = i + 1
        while j < n and (contexts[j].spindle_speed, contexts[j].tool_id,
                         contexts[j].workpiece_id) == key:
            j += 1

        bandwidth = settings.bandwidth_for(ctx.workpiece_id)
        sub = amps[i:j]
        vrms = _band_rms_from_sq(band_sq[i:j], bandwidth)
        if ctx.spindle_speed > 0:
            f_s = ctx.spindle_speed / 60.0
            mask = _harmonic_mask(n_bins, f_s, bandwidth, guard)
            nh = sub[..., mask].max(axis=-1) if mask.any() else np.zeros(sub.shape[:2])
            unb_bin = int(round(f_s / BIN_HZ))
            bear_bin = int(round(settings.defect_order_for(ctx.tool_id) * f_s / BIN_HZ))
            if max(unb_bin, bear_bin) >= n_bins:
                raise CriterionError("spindle or defect frequency above analyzed band")
            unbalance = sub[..., max(0, unb_bin - guard):unb_bin + guard + 1].max(axis=-1)
            bearing = sub[..., max(0, bear_bin - guard):bear_bin + guard + 1].max(axis=-1)
        else:
            k_max = min(int(bandwidth / BIN_HZ), n_bins - 1)
            nh = sub[..., :k_max + 1].max(axis=-1)
            unbalance = np.zeros(sub.shape[:2])
            bearing = np.zeros(sub.shape[:2])

        for k in range(i, j):
            g = k - i
            c = contexts[k]
            records.append(MonitoringRecord(
                time=float(times[k]),
                vrms=tuple(float(v) for v in vrms[g]),
                nh=tuple(float(v) for v in nh[g]),
                unbalance=tuple(float(v) for v in unbalance[g]),
                bearing=tuple(float(v) for v in bearing[g]),
                mean_power=float(mean_power[k]),
                tool_id=c.tool_id,
                program_name=c.program_name,
                workpiece_id=c.workpiece_id,
                spindle_speed=c.spindle_speed,
                feedrate=c.feedrate,
                spindle_temperature=c.spindle_temperature,
            ))
        i = j
    return records


def process_blocks(blocks, contexts, settings: MonitorSettings = MonitorSettings()):
    """Process aligned block/context streams in order; yields MonitoringRecords."""
    for block, ctx in zip(blocks, contexts):
        yield process_block(block, ctx, settings)
