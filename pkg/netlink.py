# Link Nodes
# Transmitter, receiver, fanout node and end-to-end BER test for CDCM links

import math
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from config import (LOG_LEVEL, DEFAULT_F0, RESOLUTION_FS, BUFFER_DELAY, FF_DELAY, SAMPLING_PHASE,
                    PRBS_SYNC_BUDGET, SCRAMBLER_LENGTH, BER_ZERO_ERROR_FACTOR)
from codec import Scheme, encode_values, decode_words, make_duty_modulated, duty_setting_steps
from stream import (PreEncoder, Prbs15State, Prbs15Checker, ScramblerState, PRBS15_SEED, prbs15_bits, pre_encode,
                    pre_decode, user_bits_needed)
from waveform import (EdgeWaveform, JitterModel, TimingMetrics, serialize_slots, sample_many, inject_jitter, measure,
                      period_ticks, to_ticks)
from pll import PllConfig, PllOutput, pll_run
from exceptions import InvalidParameter, ExtractorUnsupported, TooFewEdges

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


class DataKind(Enum):
    PRBS15 = "prbs15"
    CONSTANT = "constant"
    ALTERNATING = "alternating"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class DataSource:
    kind: DataKind = DataKind.PRBS15
    seed: int = PRBS15_SEED
    bit: int = 0
    bits: tuple[int, ...] = ()

    @classmethod
    def prbs15(cls, seed: int = PRBS15_SEED) -> "DataSource":
        return cls(DataKind.PRBS15, seed=seed)

    @classmethod
    def constant(cls, bit: int) -> "DataSource":
        if bit not in (0, 1):
            raise InvalidParameter(f"constant source bit must be 0 or 1, got {bit}")
        return cls(DataKind.CONSTANT, bit=bit)

    @classmethod
    def alternating(cls) -> "DataSource":
        return cls(DataKind.ALTERNATING)

    @classmethod
    def explicit(cls, bits) -> "DataSource":
        bits = tuple(int(b) for b in bits)
        if not bits or any(b not in (0, 1) for b in bits):
            raise InvalidParameter("explicit source needs a non-empty sequence of 0/1 bits")
        return cls(DataKind.EXPLICIT, bits=bits)

    def draw(self, count: int) -> np.ndarray:
        """First `count` bits of the source; explicit sequences repeat."""
        if self.kind == DataKind.PRBS15:
            return prbs15_bits(Prbs15State(self.seed), count)[0]
        if self.kind == DataKind.CONSTANT:
            return np.full(count, self.bit, dtype=np.uint8)
        if self.kind == DataKind.ALTERNATING:
            return (np.arange(count) & 1).astype(np.uint8)
        return np.resize(np.array(self.bits, dtype=np.uint8), count)


@dataclass(frozen=True)
class TxSpec:
    """
    Transmitter settings.

    duty_setting (percent) replaces the scheme by the duty-modulated family of the
    same serializer width, e.g. 10 on a 20-slot scheme gives 40 %/60 % duties.
    """
    scheme: Scheme
    f0: float = DEFAULT_F0
    pre_encoder: PreEncoder = PreEncoder.NONE
    data: DataSource = field(default_factory=DataSource.prbs15)
    duty_setting: float | None = None
    eo_delay: float = 0.0
    scrambler_seed: int = 0
    resolution_fs: int = RESOLUTION_FS

    def __post_init__(self):
        if self.f0 <= 0:
            raise InvalidParameter(f"f0 must be positive, got {self.f0}")
        if self.eo_delay < 0:
            raise InvalidParameter("eo_delay must be >= 0")
        # fails early when the setting is off the UI grid
        _ = self.line_scheme

    @property
    def line_scheme(self) -> Scheme:
        if self.duty_setting is None:
            return self.scheme
        return make_duty_modulated(self.scheme.n, duty_setting_steps(self.scheme.n, self.duty_setting))


class Checker(Enum):
    NONE = "none"
    PRBS15 = "prbs15"


@dataclass(frozen=True)
class RxSpec:
    pll: PllConfig = field(default_factory=PllConfig)
    sample_phase: float = SAMPLING_PHASE
    checker: Checker = Checker.PRBS15
    pre_encoder: PreEncoder = PreEncoder.NONE
    sync_budget: int = PRBS_SYNC_BUDGET
    cdr_bypass: bool = False
    start_time: float = 0.0

    def __post_init__(self):
        if not 0 < self.sample_phase < 1:
            raise InvalidParameter(f"sample_phase {self.sample_phase} outside (0, 1)")
        if self.pll.phase_offset != SAMPLING_PHASE:
            raise InvalidParameter("the receiver sampling phase is set with sample_phase, not pll.phase_offset")


class FanoutMode(Enum):
    REPEATER = "repeater"
    EXTRACTOR = "extractor"


@dataclass(frozen=True)
class FanoutSpec:
    """
    Fanout board: input buffer, zero-delay PLL and one flip-flop per output.

    repeater_slots sets the retiming grid (PLL multiplier) of a repeater and
    defaults to the scheme's slot count.
    """
    scheme: Scheme
    mode: FanoutMode = FanoutMode.REPEATER
    outputs: int = 2
    buffer_delay: float = BUFFER_DELAY
    buffer_jitter_sigma: float = 0.0
    ff_delay: float = FF_DELAY
    ff_jitter_sigma: float = 0.0
    pll: PllConfig = field(default_factory=PllConfig)
    repeater_slots: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.outputs < 1:
            raise InvalidParameter(f"a fanout needs at least one output, got {self.outputs}")
        if self.repeater_slots is not None and self.repeater_slots < 1:
            raise InvalidParameter(f"repeater_slots must be >= 1, got {self.repeater_slots}")
        if min(self.buffer_delay, self.ff_delay, self.buffer_jitter_sigma, self.ff_jitter_sigma) < 0:
            raise InvalidParameter("fanout delays and jitter sigmas must be >= 0")
        if self.pll.phase_offset != SAMPLING_PHASE:
            raise InvalidParameter("a fanout retimes at half a UI; pll.phase_offset cannot be changed")

    @property
    def slots(self) -> int:
        if self.mode == FanoutMode.EXTRACTOR:
            return 1
        return self.repeater_slots or self.scheme.n

    def nominal_delay(self, f0: float, resolution_fs: int = RESOLUTION_FS) -> int:
        """Input-to-output delay of a locked, jitter-free node in ticks."""
        T = period_ticks(f0, resolution_fs)
        half_ui = int(np.rint(0.5 * (T / self.slots)))
        return to_ticks(self.buffer_delay, resolution_fs) + to_ticks(self.ff_delay, resolution_fs) + half_ui


@dataclass
class ObservationMetrics:
    """Metrics recorded at one observation point; times in seconds."""
    name: str
    timing: TimingMetrics | None = None
    errors: int = 0
    bits_checked: int = 0
    symbol_errors: int = 0
    invalid_pairs: int = 0
    lock_index: int | None = None
    nominal_latency: float | None = None
    latency_per_run: list[float] = field(default_factory=list)
    latency_samples: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def ber(self) -> float | None:
        return self.errors / self.bits_checked if self.bits_checked else None

    @property
    def latency_mean(self) -> float | None:
        return float(np.mean(self.latency_per_run)) if self.latency_per_run else None

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "ber": self.ber,
            "errors": self.errors,
            "bits_checked": self.bits_checked,
            "symbol_errors": self.symbol_errors,
            "invalid_pairs": self.invalid_pairs,
            "lock_index": self.lock_index,
            "latency_mean_s": self.latency_mean,
            "latency_nominal_s": self.nominal_latency,
            "latency_per_run_s": list(self.latency_per_run),
        }
        if self.timing is not None:
            out["timing"] = self.timing.summary()
        return out


@dataclass
class MetricsReport:
    observations: dict[str, ObservationMetrics] = field(default_factory=dict)
    leaf_skew: np.ndarray = field(default_factory=lambda: np.empty(0))
    leaves: tuple[str, ...] = ()

    @property
    def leaf_skew_mean(self) -> float | None:
        return float(self.leaf_skew.mean()) if self.leaf_skew.size else None

    @property
    def leaf_skew_rms(self) -> float | None:
        return float(np.sqrt(np.mean(self.leaf_skew**2))) if self.leaf_skew.size else None

    @property
    def leaf_skew_std(self) -> float | None:
        return float(self.leaf_skew.std()) if self.leaf_skew.size else None

    def to_dict(self) -> dict:
        return {
            "observations": {name: obs.to_dict() for name, obs in self.observations.items()},
            "leaves": list(self.leaves),
            "leaf_skew_mean_s": self.leaf_skew_mean,
            "leaf_skew_rms_s": self.leaf_skew_rms,
            "leaf_skew_std_s": self.leaf_skew_std,
        }


@dataclass(frozen=True)
class BerResult:
    ber: float
    errors: int
    bits: int
    bound: float


def _pack_values(bits: np.ndarray, bits_per_cycle: int) -> np.ndarray:
    weights = 1 << np.arange(bits_per_cycle - 1, -1, -1, dtype=np.int64)
    return bits.reshape(-1, bits_per_cycle).astype(np.int64) @ weights


def _unpack_values(values: np.ndarray, bits_per_cycle: int) -> np.ndarray:
    shifts = np.arange(bits_per_cycle - 1, -1, -1, dtype=np.int64)
    return ((values[:, None] >> shifts[None, :]) & 1).astype(np.uint8).ravel()


def transmit(tx: TxSpec, n_cycles: int) -> tuple[EdgeWaveform, np.ndarray]:
    """
    Serialize n_cycles carrier cycles of source data.

    Returns:
        (waveform, line bits after the pre-encoder, MSB first within a cycle)
    """
    if n_cycles < 1:
        raise InvalidParameter(f"n_cycles must be >= 1, got {n_cycles}")
    scheme = tx.line_scheme
    bpc = scheme.bits_per_cycle
    if bpc == 0:
        values = np.full(n_cycles, -1, dtype=np.int64)
        line = np.empty(0, dtype=np.uint8)
    else:
        line_bits = n_cycles * bpc
        user = tx.data.draw(user_bits_needed(tx.pre_encoder, line_bits))
        line = pre_encode(tx.pre_encoder, user, ScramblerState(tx.scrambler_seed))[:line_bits]
        values = _pack_values(line, bpc)
    w = serialize_slots(encode_values(scheme, values), tx.f0, tx.resolution_fs)
    eo = to_ticks(tx.eo_delay, tx.resolution_fs)
    if eo:
        w = w.shifted(eo)
    logger.debug(f"transmit: {n_cycles} cycles of {scheme.name}, {line.size} line bits")
    return w, line


def _bypass_output(w: EdgeWaveform, cfg: PllConfig) -> PllOutput:
    """Ideal external recovery: every input rising edge is taken as a feedback edge."""
    rising = w.rising_edges().astype(np.float64)
    if rising.size < 2:
        raise TooFewEdges("clock recovery bypass needs >= 2 rising edges")
    last = rising[-1] - rising[-2]
    extra = max(0, int(math.ceil((w.duration - rising[-1]) / last)) + 1)
    edges = np.concatenate((rising, rising[-1] + last * np.arange(1, extra + 1)))
    return PllOutput(edges, cfg.multiplier, cfg.phase_offset, w.duration, w.resolution_fs)


def receive(w: EdgeWaveform, rx: RxSpec, scheme: Scheme) -> tuple[EdgeWaveform, np.ndarray, MetricsReport]:
    """
    Recover the carrier and the data of a CDCM stream.

    Schemes whose data bit is visible half a period after the rising edge are
    sampled once per cycle at rx.sample_phase; other schemes are sampled on an
    n-times multiplied clock and decoded word by word, counting bad words.

    Returns:
        (recovered carrier clock, user bits after the pre-decoder, report with one "rx" entry)
    """
    single = scheme.midpoint_decodable
    if single:
        cfg = replace(rx.pll, multiplier=1, phase_offset=rx.sample_phase)
    else:
        cfg = replace(rx.pll, multiplier=scheme.n, phase_offset=0.5)

    lock_index = None
    if rx.cdr_bypass:
        output = _bypass_output(w, cfg)
    else:
        output, state = pll_run(w, cfg, rx.start_time)
        lock_index = state.lock_index

    instants = output.sampling_instants()
    symbol_errors = 0
    if single:
        line = sample_many(w, instants)
    else:
        ui = int(np.rint((output.feedback_edges[1] - output.feedback_edges[0]) / output.subdivisions))
        lead = max(int(instants[0]) - ui, 0)
        samples = sample_many(w, np.concatenate(([lead], instants)))
        cycles = samples.size // scheme.n
        values, valid = decode_words(scheme, samples[:cycles * scheme.n].reshape(cycles, scheme.n))
        symbol_errors = int(np.count_nonzero(~valid | (values < 0)))
        if symbol_errors:
            logger.warning(f"receive: {symbol_errors} undecodable words in {cycles}")
        line = _unpack_values(np.maximum(values, 0), scheme.bits_per_cycle)

    bits, invalid = pre_decode(rx.pre_encoder, line)
    obs = ObservationMetrics("rx", symbol_errors=symbol_errors, invalid_pairs=invalid, lock_index=lock_index)
    if rx.checker == Checker.PRBS15:
        result = Prbs15Checker(sync_budget=rx.sync_budget).check(bits)
        obs.errors, obs.bits_checked = result.errors, result.bits_checked

    carrier = replace(output, subdivisions=cfg.pre_divider if not rx.cdr_bypass else 1, phase_offset=0.0)
    recovered = carrier.clock
    try:
        obs.timing = measure(recovered, cfg.nominal_f0)
    except TooFewEdges:
        logger.warning("receive: recovered clock too short to measure")
    return recovered, bits, MetricsReport({"rx": obs})


def fanout_node(input: EdgeWaveform, spec: FanoutSpec, start_time: float = 0.0) -> list[EdgeWaveform]:
    """
    Buffer, recover the clock with a zero-delay PLL and retime with flip-flops.

    A repeater samples at (k + 0.5) UI of an n-slot grid and re-emits the CDCM
    stream; an extractor samples once per cycle half a period after the rising
    edge and emits the bare data bits.

    Raises:
        ExtractorUnsupported: extractor requested on a scheme that is not CDCM-N-1
    """
    if spec.mode == FanoutMode.EXTRACTOR and not spec.scheme.is_n1:
        raise ExtractorUnsupported(f"{spec.scheme.name}: data extraction needs a CDCM-N-1 scheme")
    res = input.resolution_fs
    buffered = input.shifted(to_ticks(spec.buffer_delay, res))
    buffered = inject_jitter(buffered, JitterModel(random_sigma=spec.buffer_jitter_sigma, seed=spec.seed))

    cfg = replace(spec.pll, multiplier=spec.slots, phase_offset=0.5, zero_delay=True)
    output, _ = pll_run(buffered, cfg, start_time)
    instants = output.sampling_instants()
    levels = sample_many(buffered, instants)
    ff = to_ticks(spec.ff_delay, res)
    retimed = EdgeWaveform.from_levels(instants + ff, levels, 0, buffered.duration + ff, res)
    logger.debug(f"fanout {spec.mode.value}: {instants.size} samples, {len(retimed)} output edges")
    return [inject_jitter(retimed, JitterModel(random_sigma=spec.ff_jitter_sigma, seed=spec.seed + 1 + k))
            for k in range(spec.outputs)]


def ber_test(tx: TxSpec, rx: RxSpec, channel: JitterModel, n_bits: int) -> BerResult:
    """
    Transmit n_bits user bits through a jittered channel and count receive errors.

    With the PRBS checker the count starts at checker synchronisation; without it
    the received bits are compared with the transmitted source bits (after the
    descrambler has flushed when a scrambler is used).
    """
    if n_bits < 1000:
        raise InvalidParameter(f"n_bits must be >= 1000, got {n_bits}")
    scheme = tx.line_scheme
    bpc = scheme.bits_per_cycle
    if bpc == 0:
        raise InvalidParameter(f"{scheme.name} carries no data")
    line_bits = n_bits * (2 if tx.pre_encoder == PreEncoder.MANCHESTER else 1)
    n_cycles = -(-line_bits // bpc)
    w, _ = transmit(tx, n_cycles)
    w = inject_jitter(w, channel)
    _, bits, _ = receive(w, replace(rx, pre_encoder=tx.pre_encoder, checker=Checker.NONE), scheme)
    bits = bits[:n_bits]

    if rx.checker == Checker.PRBS15:
        result = Prbs15Checker(sync_budget=rx.sync_budget).check(bits)
        errors, checked = result.errors, result.bits_checked
    else:
        sent = tx.data.draw(n_bits)
        skip = SCRAMBLER_LENGTH if tx.pre_encoder == PreEncoder.SCRAMBLER else 0
        checked = min(bits.size, sent.size) - skip
        errors = int(np.count_nonzero(bits[skip:skip + checked] != sent[skip:skip + checked]))
    ber = errors / checked if checked else 0.0
    logger.info(f"BER test {scheme.name}: {errors} errors in {checked} bits")
    return BerResult(ber, errors, checked, BER_ZERO_ERROR_FACTOR / checked if checked else math.inf)


def run_topology(t, n_cycles: int, seed: int = 0, runs: int = 1) -> MetricsReport:
    """Evaluate a topology; see topology.run_topology."""
    from topology import run_topology as _run_topology
    return _run_topology(t, n_cycles, seed, runs)
