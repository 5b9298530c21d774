# Edge Waveforms
# Edge-timestamped binary signals, serialization of cycle words, jitter injection and timing metrology

import math
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc

from config import LOG_LEVEL, FS_PER_SECOND, RESOLUTION_FS
from codec import CycleWord
from exceptions import (InvalidWaveform, MixedWordLength, OutOfRange, EdgeReorder, TooFewEdges,
                        InvalidParameter)

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

SERIALIZE_BLOCK = 1 << 18  # cycles per vectorised block


def to_ticks(seconds: float, resolution_fs: int = RESOLUTION_FS) -> int:
    return int(round(seconds * FS_PER_SECOND / resolution_fs))


def to_seconds(ticks, resolution_fs: int = RESOLUTION_FS):
    return ticks * resolution_fs / FS_PER_SECOND


def period_ticks(f0: float, resolution_fs: int = RESOLUTION_FS) -> int:
    if f0 <= 0:
        raise InvalidParameter(f"carrier frequency must be positive, got {f0}")
    ticks = int(round(FS_PER_SECOND / (f0 * resolution_fs)))
    if ticks < 1:
        raise InvalidParameter(f"f0={f0} Hz is below one tick at {resolution_fs} fs resolution")
    return ticks


@dataclass(frozen=True, eq=False)
class EdgeWaveform:
    """
    A binary signal as its initial level plus strictly increasing transition times.

    Times and duration are integer ticks of `resolution_fs` femtoseconds; levels
    alternate, so the level after edge i is initial_level ^ ((i + 1) & 1).
    """
    initial_level: int
    times: np.ndarray
    duration: int
    resolution_fs: int = RESOLUTION_FS

    def __post_init__(self):
        times = np.array(self.times, dtype=np.int64).ravel()
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "duration", int(self.duration))
        if self.initial_level not in (0, 1):
            raise InvalidWaveform(f"initial level must be 0 or 1, got {self.initial_level}")
        if times.size:
            if times[0] < 0 or times[-1] > self.duration:
                raise InvalidWaveform("edge timestamps outside [0, duration]")
            if times.size > 1 and not np.all(np.diff(times) > 0):
                raise InvalidWaveform("edge timestamps must be strictly increasing")

    @property
    def levels(self) -> np.ndarray:
        """Level entered at each edge."""
        return (self.initial_level ^ ((np.arange(self.times.size) + 1) & 1)).astype(np.uint8)

    def rising_edges(self) -> np.ndarray:
        return self.times[0::2] if self.initial_level == 0 else self.times[1::2]

    def falling_edges(self) -> np.ndarray:
        return self.times[1::2] if self.initial_level == 0 else self.times[0::2]

    def shifted(self, delta: int) -> "EdgeWaveform":
        """Delay by a non-negative number of ticks."""
        if delta < 0:
            raise InvalidParameter(f"negative delay {delta}")
        return EdgeWaveform(self.initial_level, self.times + delta, self.duration + delta, self.resolution_fs)

    @classmethod
    def from_levels(cls, instants: np.ndarray, levels: np.ndarray, initial_level: int, duration: int,
                    resolution_fs: int = RESOLUTION_FS) -> "EdgeWaveform":
        """Waveform taking levels[i] at instants[i]; only level changes become edges."""
        levels = np.asarray(levels, dtype=np.int8)
        instants = np.asarray(instants, dtype=np.int64)
        previous = np.concatenate(([initial_level], levels[:-1]))
        change = levels != previous
        return cls(initial_level, instants[change], duration, resolution_fs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EdgeWaveform):
            return NotImplemented
        return (self.initial_level == other.initial_level and self.duration == other.duration
                and self.resolution_fs == other.resolution_fs and np.array_equal(self.times, other.times))

    def __len__(self) -> int:
        return int(self.times.size)


def serialize_slots(slots: np.ndarray, f0: float, resolution_fs: int = RESOLUTION_FS) -> EdgeWaveform:
    """
    Place a (cycles, n) slot matrix on the time axis.

    Slot i of cycle c starts at c*T + floor(i*T/n), so every cycle's rising edge
    (slot 1) is exactly T after the previous one.
    """
    slots = np.asarray(slots, dtype=np.uint8)
    if slots.ndim != 2 or slots.shape[0] == 0:
        raise InvalidParameter("serialize needs at least one cycle word")
    cycles, n = slots.shape
    T = period_ticks(f0, resolution_fs)
    offsets = (np.arange(n, dtype=np.int64) * T) // n
    chunks = []
    last = int(slots[0, 0])
    for start in range(0, cycles, SERIALIZE_BLOCK):
        flat = slots[start:start + SERIALIZE_BLOCK].ravel()
        previous = np.concatenate(([last], flat[:-1]))
        change = np.flatnonzero(flat != previous)
        chunks.append((start + change // n) * T + offsets[change % n])
        last = int(flat[-1])
    times = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return EdgeWaveform(int(slots[0, 0]), times, cycles * T, resolution_fs)


def serialize(words: Sequence[CycleWord] | np.ndarray, f0: float, resolution_fs: int = RESOLUTION_FS) -> EdgeWaveform:
    if isinstance(words, np.ndarray):
        return serialize_slots(words, f0, resolution_fs)
    lengths = {len(w) for w in words}
    if len(lengths) > 1:
        raise MixedWordLength(f"cycle words of different lengths {sorted(lengths)}")
    return serialize_slots(np.array([w.bits for w in words], dtype=np.uint8), f0, resolution_fs)


def ideal_clock(f0: float, n_cycles: int, duty: float = 0.5, phase: float = 0.25,
                resolution_fs: int = RESOLUTION_FS) -> EdgeWaveform:
    """Pure clock with rising edges at (k + phase)·T."""
    T = period_ticks(f0, resolution_fs)
    rise = np.arange(n_cycles, dtype=np.int64) * T + int(round(phase * T))
    fall = rise + int(round(duty * T))
    times = np.column_stack((rise, fall)).ravel()
    return EdgeWaveform(0, times, n_cycles * T + int(round(phase * T)), resolution_fs)


def sample(w: EdgeWaveform, t: int) -> int:
    """Level just before tick t; a transition exactly at t is not yet seen."""
    if t < 0 or t > w.duration:
        raise OutOfRange(f"sample time {t} outside [0, {w.duration}]")
    return w.initial_level ^ (int(np.searchsorted(w.times, t, side="left")) & 1)


def sample_many(w: EdgeWaveform, instants) -> np.ndarray:
    instants = np.asarray(instants, dtype=np.int64)
    if instants.size and (instants.min() < 0 or instants.max() > w.duration):
        raise OutOfRange(f"sample times outside [0, {w.duration}]")
    count = np.searchsorted(w.times, instants, side="left")
    return (w.initial_level ^ (count & 1)).astype(np.uint8)


@dataclass(frozen=True)
class JitterModel:
    random_sigma: float = 0.0
    periodic_amplitude: float = 0.0
    periodic_frequency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.random_sigma < 0 or self.periodic_amplitude < 0:
            raise InvalidParameter("jitter sigma and amplitude must be >= 0")

    @property
    def is_ideal(self) -> bool:
        return self.random_sigma == 0 and self.periodic_amplitude == 0


def inject_jitter(w: EdgeWaveform, model: JitterModel) -> EdgeWaveform:
    """
    Perturb every edge by a Gaussian term plus a sinusoid evaluated at the edge time.

    Deterministic for a given seed. Raises EdgeReorder when the perturbation would
    swap or merge edges or move one before t=0.
    """
    if model.is_ideal or w.times.size == 0:
        return w
    delta = np.zeros(w.times.size, dtype=np.float64)
    if model.random_sigma:
        rng = np.random.default_rng(model.seed)
        delta += rng.normal(0.0, model.random_sigma * FS_PER_SECOND / w.resolution_fs, w.times.size)
    if model.periodic_amplitude:
        t = to_seconds(w.times.astype(np.float64), w.resolution_fs)
        amplitude = model.periodic_amplitude * FS_PER_SECOND / w.resolution_fs
        delta += amplitude * np.sin(2 * math.pi * model.periodic_frequency * t)
    times = w.times + np.rint(delta).astype(np.int64)
    if times[0] < 0 or (times.size > 1 and not np.all(np.diff(times) > 0)):
        raise EdgeReorder("jitter reorders edges; reduce sigma or amplitude")
    return EdgeWaveform(w.initial_level, times, max(w.duration, int(times[-1])), w.resolution_fs)


@dataclass(frozen=True)
class TimingMetrics:
    """Timing of one observed clock. All times in seconds; `rising_edges` in ticks."""
    period: float
    rising_intervals: np.ndarray
    tie: np.ndarray
    tie_rms: float
    tie_pp: float
    duty_cycles: np.ndarray
    ddj_pp: float
    rj_rms: float
    pj_amplitude: float
    rising_edges: np.ndarray

    def summary(self) -> dict:
        return {
            "period_s": self.period,
            "edges": int(self.rising_edges.size),
            "tie_rms_s": self.tie_rms,
            "tie_pp_s": self.tie_pp,
            "ddj_pp_s": self.ddj_pp,
            "rj_rms_s": self.rj_rms,
            "pj_amplitude_s": self.pj_amplitude,
            "duty_min": float(self.duty_cycles.min()) if self.duty_cycles.size else None,
            "duty_max": float(self.duty_cycles.max()) if self.duty_cycles.size else None,
        }


def _grid_fit(rising: np.ndarray, T: int) -> tuple[np.ndarray, float]:
    """Cycle index of every rising edge and the least-squares grid offset (ticks)."""
    k = np.rint((rising - rising[0]) / T).astype(np.int64)
    d = rising - k * T
    return d, float(d.mean())


def fit_sinusoid(t: np.ndarray, values: np.ndarray, frequency: float) -> float:
    """Least-squares amplitude of a sinusoid at `frequency` (plus constant) in values(t)."""
    arg = 2 * math.pi * frequency * np.asarray(t, dtype=np.float64)
    design = np.column_stack((np.sin(arg), np.cos(arg), np.ones_like(arg)))
    coeffs, *_ = np.linalg.lstsq(design, np.asarray(values, dtype=np.float64), rcond=None)
    return float(math.hypot(coeffs[0], coeffs[1]))


def measure(w: EdgeWaveform, f0: float, scheme_n: int = 1, periodic_frequency: float | None = None) -> TimingMetrics:
    """
    TIE, duty cycle and jitter decomposition of the rising edges of w.

    The reference grid has period T = 1/f0 and a least-squares offset, so a constant
    delay is absorbed and a frequency offset shows up as a ramp. DDJ groups cycles
    by their number of high unit intervals.
    """
    rising = w.rising_edges()
    if rising.size < 2:
        raise TooFewEdges(f"measure needs >= 2 rising edges, got {rising.size}")
    T = period_ticks(f0, w.resolution_fs)
    d, offset = _grid_fit(rising, T)
    tie = d - offset

    first_rise = 0 if w.initial_level == 0 else 1
    fall = w.times[first_rise + 1::2][: rising.size - 1]
    intervals = np.diff(rising)
    duty = (fall - rising[:-1]) / intervals

    keys = np.rint(duty * scheme_n).astype(np.int64)
    cycle_tie = tie[:-1]
    ddj_pp = 0.0
    residual = cycle_tie
    if keys.size:
        unique, inverse = np.unique(keys, return_inverse=True)
        means = np.bincount(inverse, weights=cycle_tie) / np.bincount(inverse)
        ddj_pp = float(means.max() - means.min())
        residual = cycle_tie - means[inverse]
    rj = float(np.sqrt(np.mean(residual**2))) if residual.size else 0.0

    scale = w.resolution_fs / FS_PER_SECOND
    pj = 0.0
    if periodic_frequency:
        pj = fit_sinusoid(rising * scale, tie * scale, periodic_frequency)
    return TimingMetrics(
        period=T * scale,
        rising_intervals=intervals * scale,
        tie=tie * scale,
        tie_rms=float(np.sqrt(np.mean(tie**2))) * scale,
        tie_pp=float(np.ptp(tie)) * scale,
        duty_cycles=duty,
        ddj_pp=ddj_pp * scale,
        rj_rms=rj * scale,
        pj_amplitude=pj,
        rising_edges=rising,
    )


@dataclass(frozen=True)
class EyeHistogram:
    """
    Transition density of a waveform folded modulo T.

    counts[0] holds rising transitions, counts[1] falling ones, per time bin; bin 0
    starts at the recovered rising-edge phase plus the requested offset.
    """
    counts: np.ndarray
    period: float
    opening: float
    loci: np.ndarray
    cycles: int

    @property
    def bins(self) -> int:
        return int(self.counts.shape[1])

    @property
    def bin_width(self) -> float:
        return self.period / self.bins


def eye_histogram(w: EdgeWaveform, f0: float, bins_t: int = 64, offset: float = 0.0) -> EyeHistogram:
    if bins_t < 8:
        raise InvalidParameter(f"bins_t={bins_t} must be >= 8")
    rising = w.rising_edges()
    if rising.size < 2:
        raise TooFewEdges(f"eye histogram needs >= 2 rising edges, got {rising.size}")
    T = period_ticks(f0, w.resolution_fs)
    _, grid_offset = _grid_fit(rising, T)
    origin = int(round(grid_offset)) + to_ticks(offset, w.resolution_fs)
    phase = np.mod(w.times - origin, T)
    bins = (phase * bins_t) // T
    rising_mask = w.levels == 1
    counts = np.vstack((np.bincount(bins[rising_mask], minlength=bins_t),
                        np.bincount(bins[~rising_mask], minlength=bins_t))).astype(np.int64)

    loci = np.unique(phase)
    mid = T // 2
    if loci.size == 0:
        opening = T
    elif np.any(loci == mid):
        opening = 0
    else:
        after = loci[loci > mid]
        before = loci[loci < mid]
        nxt = after.min() if after.size else loci.min() + T
        prv = before.max() if before.size else loci.max() - T
        opening = int(nxt - prv)
    scale = w.resolution_fs / FS_PER_SECOND
    return EyeHistogram(counts, T * scale, opening * scale, loci * scale, int(rising.size))


def bathtub(hist: EyeHistogram, rj_sigma: float, points: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """
    BER versus sampling phase.

    Every folded transition locus contributes its per-cycle density times the
    Gaussian tail probability of crossing the sampling instant.

    Returns:
        (phases in seconds within the period, BER estimate per phase)
    """
    if rj_sigma <= 0:
        raise InvalidParameter("bathtub needs a positive random jitter sigma")
    points = points or hist.bins
    phases = (np.arange(points) + 0.5) * hist.period / points
    centres = (np.arange(hist.bins) + 0.5) * hist.bin_width
    density = hist.counts.sum(axis=0) / max(hist.cycles, 1)
    used = density > 0
    gap = np.abs(phases[:, None] - centres[None, used])
    gap = np.minimum(gap, hist.period - gap)
    ber = (density[used][None, :] * 0.5 * erfc(gap / (rj_sigma * math.sqrt(2)))).sum(axis=1)
    return phases, np.minimum(ber, 0.5)
