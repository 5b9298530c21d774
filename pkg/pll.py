# Clock Recovery PLL
# Behavioural zero-delay PLL locking on rising edges: pre-divider, phase detector, PI loop filter, NCO with multiplier

import math
import logging
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import signal

from config import (LOG_LEVEL, DEFAULT_F0, FS_PER_SECOND, SAMPLING_PHASE, PLL_LOCK_THRESHOLD, PLL_LOCK_COUNT,
                    PLL_CAPTURE_RANGE, PLL_DEFAULT_BANDWIDTH, PLL_DEFAULT_DAMPING)
from waveform import EdgeWaveform, JitterModel, ideal_clock, inject_jitter, fit_sinusoid, period_ticks, to_ticks
from exceptions import NoLock, CaptureRange, InvalidParameter

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def is_stable(kp: float, ki: float) -> bool:
    """Jury test of z^2 + (kp+ki-2)z + (1-kp): 0 < kp < 2, ki >= 0, 2kp + ki < 4."""
    return 0 < kp < 2 and ki >= 0 and 2 * kp + ki < 4


def _bandwidth_factor(damping: float) -> float:
    """3 dB bandwidth over natural frequency of a second-order type-II loop (2.058 at 0.707)."""
    a = 1 + 2 * damping**2
    return math.sqrt(a + math.sqrt(a * a + 1))


def gains_for_bandwidth(bw_fraction: float, pre_divider: int = 1,
                        damping: float = PLL_DEFAULT_DAMPING) -> tuple[float, float]:
    """
    Loop gains for a target closed-loop bandwidth.

    Args:
        bw_fraction: 3 dB bandwidth as a fraction of the carrier frequency
        pre_divider: Input edges per phase-detector update
        damping: Damping factor of the equivalent continuous loop

    Returns:
        (kp, ki) per-update gains
    """
    if bw_fraction <= 0:
        raise InvalidParameter(f"bandwidth fraction must be positive, got {bw_fraction}")
    wn_tu = 2 * math.pi * bw_fraction * pre_divider / _bandwidth_factor(damping)
    kp, ki = 2 * damping * wn_tu, wn_tu**2
    if not is_stable(kp, ki):
        raise InvalidParameter(f"bandwidth {bw_fraction}·f0 with R={pre_divider} is outside the stable region")
    return kp, ki


@dataclass(frozen=True)
class PllConfig:
    """
    Static PLL settings. Gains are per phase-detector update; times in seconds.

    phase_offset is the fraction of the output period by which the sampling clock
    lags the primary clock (0.5 is the 180 degree default).
    """
    nominal_f0: float = DEFAULT_F0
    pre_divider: int = 1
    multiplier: int = 1
    kp: float = 0.5
    ki: float = 0.05
    phase_offset: float = SAMPLING_PHASE
    zero_delay: bool = True
    lock_threshold: float = PLL_LOCK_THRESHOLD
    lock_count: int = PLL_LOCK_COUNT
    static_offset: float = 0.0
    insertion_delay: float = 0.0

    def __post_init__(self):
        if self.pre_divider < 1 or self.multiplier < 1:
            raise InvalidParameter(f"pre_divider and multiplier must be >= 1 "
                                   f"(got R={self.pre_divider}, M={self.multiplier})")
        if not is_stable(self.kp, self.ki):
            raise InvalidParameter(f"kp={self.kp}, ki={self.ki} outside the stable region "
                                   f"0 < kp < 2, ki >= 0, 2kp + ki < 4")
        if not 0 <= self.phase_offset < 1:
            raise InvalidParameter(f"phase_offset {self.phase_offset} outside [0, 1)")
        if self.lock_count < 1 or self.lock_threshold <= 0:
            raise InvalidParameter("lock_count must be >= 1 and lock_threshold > 0")

    @classmethod
    def from_bandwidth(cls, bw_fraction: float = PLL_DEFAULT_BANDWIDTH, damping: float = PLL_DEFAULT_DAMPING,
                       **kwargs) -> "PllConfig":
        kp, ki = gains_for_bandwidth(bw_fraction, kwargs.get("pre_divider", 1), damping)
        return cls(kp=kp, ki=ki, **kwargs)


def loop_bandwidth(cfg: PllConfig) -> float:
    """Approximate 3 dB closed-loop bandwidth in Hz."""
    update_rate = cfg.nominal_f0 / cfg.pre_divider
    if cfg.ki == 0:
        return -math.log(1 - min(cfg.kp, 0.999999)) * update_rate / (2 * math.pi)
    wn_tu = math.sqrt(cfg.ki)
    damping = (cfg.kp + cfg.ki) / (2 * wn_tu)
    return _bandwidth_factor(damping) * wn_tu * update_rate / (2 * math.pi)


@dataclass(frozen=True)
class PllState:
    """Loop state after a run; phase errors are kept in ticks."""
    nco_phase: float
    nco_freq: float
    integrator: float
    locked: bool
    lock_index: int
    phase_error_ticks: np.ndarray
    feedback_edges: np.ndarray
    resolution_fs: int

    @property
    def phase_error_trace(self) -> np.ndarray:
        return self.phase_error_ticks * self.resolution_fs / FS_PER_SECOND

    def trace_rows(self) -> list[dict]:
        return [{"update_index": i, "error_ticks": int(round(e))} for i, e in enumerate(self.phase_error_ticks)]


@dataclass
class PllOutput:
    """
    NCO output, built on demand from the feedback edges.

    Every feedback interval is split into `subdivisions` output periods; the
    primary clock rises at each split point with 50 % duty, the sampling clock
    `phase_offset` of a period later.
    """
    feedback_edges: np.ndarray
    subdivisions: int
    phase_offset: float
    duration: int
    resolution_fs: int
    shift: int = 0

    def _rising(self, phase: float) -> tuple[np.ndarray, np.ndarray]:
        x = self.feedback_edges
        period = np.diff(x) / self.subdivisions
        steps = np.arange(self.subdivisions, dtype=np.float64) + phase
        rise = (x[:-1, None] + steps[None, :] * period[:, None]).ravel()
        half = np.repeat(np.floor(period / 2), self.subdivisions)
        return np.rint(rise).astype(np.int64) + self.shift, half.astype(np.int64)

    def _clock(self, phase: float) -> EdgeWaveform:
        rise, half = self._rising(phase)
        keep = rise >= 0
        rise, half = rise[keep], half[keep]
        times = np.column_stack((rise, rise + half)).ravel()
        times = times[times <= self.duration]
        return EdgeWaveform(0, times, self.duration, self.resolution_fs)

    def sampling_instants(self) -> np.ndarray:
        """Rising edges of the sampling clock inside the input duration."""
        rise, _ = self._rising(self.phase_offset)
        return rise[(rise >= 0) & (rise <= self.duration)]

    @cached_property
    def clock(self) -> EdgeWaveform:
        return self._clock(0.0)

    @cached_property
    def sampling_clock(self) -> EdgeWaveform:
        return self._clock(self.phase_offset)


def _loop_filter(u: np.ndarray, kp: float, ki: float, limit: float) -> tuple[np.ndarray, np.ndarray, bool]:
    """
    Closed-loop response of the PI loop to input phase deviations u (ticks).

    Returns (y, err, linear): y has one more entry than u. linear is False when the
    phase detector saturated and the recurrence had to be stepped explicitly.
    """
    b = [0.0, kp + ki, -kp]
    a = [1.0, kp + ki - 2.0, 1.0 - kp]
    y = signal.lfilter(b, a, np.append(u, 0.0))
    err = u - y[:-1]
    if np.all(np.abs(err) <= limit):
        return y, err, True

    y = np.zeros(u.size + 1)
    err = np.zeros(u.size)
    phase, integrator = 0.0, 0.0
    for m, target in enumerate(u.tolist()):
        e = min(max(target - phase, -limit), limit)
        integrator += ki * e
        phase += integrator + kp * e
        err[m] = e
        y[m + 1] = phase
    return y, err, False


def pll_run(input: EdgeWaveform, cfg: PllConfig, start_time: float = 0.0) -> tuple[PllOutput, PllState]:
    """
    Lock the loop on the rising edges of `input`.

    The NCO is released at the first rising edge at or after start_time with the
    nominal frequency. Falling edges never reach the phase detector, so duty-cycle
    modulation does not change the result.

    Raises:
        CaptureRange: mean input rate more than 1 % away from nominal_f0
        NoLock: lock criterion never met within the input
    """
    res = input.resolution_fs
    T = period_ticks(cfg.nominal_f0, res)
    rising = input.rising_edges()
    rising = rising[rising >= to_ticks(start_time, res)]
    if rising.size < 2:
        raise NoLock(f"only {rising.size} rising edges after start time {start_time}")
    mean_interval = (rising[-1] - rising[0]) / (rising.size - 1)
    if abs(mean_interval - T) > PLL_CAPTURE_RANGE * T:
        raise CaptureRange(f"input period {mean_interval * res / FS_PER_SECOND:.6g} s is outside "
                           f"±{PLL_CAPTURE_RANGE:.0%} of 1/{cfg.nominal_f0:g} Hz")

    R = cfg.pre_divider
    P = R * T
    detected = rising[::R]
    origin = int(detected[0])
    nominal = np.arange(detected.size + 1, dtype=np.int64) * P
    u = (detected - origin - nominal[:-1]).astype(np.float64)
    y, err, linear = _loop_filter(u, cfg.kp, cfg.ki, P / 2)
    if not linear:
        logger.debug("phase detector saturated; stepped the loop explicitly")
    feedback = origin + nominal.astype(np.float64) + y

    threshold = cfg.lock_threshold * FS_PER_SECOND / res
    ok = (np.abs(err) < threshold).astype(np.int64)
    runs = np.convolve(ok, np.ones(cfg.lock_count, dtype=np.int64), mode="valid")
    hits = np.flatnonzero(runs == cfg.lock_count)
    if hits.size == 0:
        raise NoLock(f"no {cfg.lock_count} consecutive updates within ±{cfg.lock_threshold:g} s "
                     f"over {err.size} updates")
    lock_index = int(hits[0]) + cfg.lock_count - 1
    logger.debug(f"PLL locked at update {lock_index} of {err.size}")

    last = feedback[-1] - feedback[-2]
    extra = max(0, int(math.ceil((input.duration - feedback[-1]) / last)) + 1)
    extended = np.concatenate((feedback, feedback[-1] + last * np.arange(1, extra + 1)))

    shift = to_ticks(cfg.static_offset + (0.0 if cfg.zero_delay else cfg.insertion_delay), res)
    output = PllOutput(extended, R * cfg.multiplier, cfg.phase_offset, input.duration + max(shift, 0), res, shift)
    state = PllState(
        nco_phase=float(feedback[-1] / T),
        nco_freq=float(cfg.multiplier * R * FS_PER_SECOND / (res * last)),
        integrator=float(cfg.ki * err.sum()),
        locked=True,
        lock_index=lock_index,
        phase_error_ticks=err,
        feedback_edges=feedback,
        resolution_fs=res,
    )
    return output, state


@dataclass(frozen=True)
class TransferResult:
    gain: float
    valid: bool


def jitter_transfer(cfg: PllConfig, f_mod: float, amplitude: float, n_cycles: int | None = None,
                    resolution_fs: int | None = None) -> TransferResult:
    """
    Sinusoidal jitter gain from input rising edges to the NCO feedback edges.

    The first part of the run is discarded as lock-in transient; amplitudes of
    input and output TIE are least-squares sinusoid fits at f_mod.
    """
    if amplitude == 0:
        return TransferResult(0.0, False)
    res = resolution_fs or 1
    T = period_ticks(cfg.nominal_f0, res)
    if amplitude * FS_PER_SECOND / res >= 0.1 * T:
        raise InvalidParameter(f"jitter amplitude {amplitude:g} s is not below 0.1 UI")
    if not 0 < f_mod < cfg.nominal_f0 / (2 * cfg.pre_divider):
        raise InvalidParameter(f"f_mod={f_mod:g} Hz outside (0, update rate / 2)")

    bw = loop_bandwidth(cfg)
    settle = cfg.pre_divider * max(64, int(math.ceil(8 * cfg.nominal_f0 / (2 * math.pi * bw * cfg.pre_divider))))
    if n_cycles is None:
        n_cycles = settle + int(math.ceil(4 * cfg.nominal_f0 / f_mod))
    clock = ideal_clock(cfg.nominal_f0, n_cycles, resolution_fs=res)
    stimulus = inject_jitter(clock, JitterModel(periodic_amplitude=amplitude, periodic_frequency=f_mod))
    _, state = pll_run(stimulus, replace(cfg, lock_threshold=max(cfg.lock_threshold, 4 * amplitude)))

    detected = stimulus.rising_edges()[::cfg.pre_divider]
    ideal = clock.rising_edges()[::cfg.pre_divider].astype(np.float64)
    skip = settle // cfg.pre_divider
    if detected.size - skip < 8:
        raise InvalidParameter(f"n_cycles={n_cycles} leaves no settled updates")
    t = ideal[skip:] * res / FS_PER_SECOND
    gain_in = fit_sinusoid(t, detected[skip:] - ideal[skip:], f_mod)
    gain_out = fit_sinusoid(t, state.feedback_edges[skip:detected.size] - ideal[skip:], f_mod)
    logger.debug(f"jitter transfer at {f_mod:g} Hz: in {gain_in:.1f} ticks, out {gain_out:.1f} ticks")
    return TransferResult(gain_out / gain_in, True)
