# Bit Stream Pre-encoders
# PRBS15 generation and checking, Manchester, self-synchronizing scrambler, running disparity

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from config import (LOG_LEVEL, PRBS_LOAD_BITS, PRBS_VERIFY_BITS, PRBS_SYNC_BUDGET, SCRAMBLER_LENGTH)
from exceptions import ZeroState, InvalidPair, OddLength, SyncFailed, InvalidParameter

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

PRBS15_DEGREE = 15
PRBS15_PERIOD = 2**PRBS15_DEGREE - 1
PRBS15_MASK = PRBS15_PERIOD
PRBS15_SEED = 0x7FFF

SCRAMBLER_MASK = (1 << SCRAMBLER_LENGTH) - 1


class PreEncoder(Enum):
    NONE = "none"
    MANCHESTER = "manchester"
    SCRAMBLER = "scrambler"


@dataclass(frozen=True)
class Prbs15State:
    """15-bit Fibonacci register for x^15 + x^14 + 1; bit 15 is the output tap."""
    register: int = PRBS15_SEED

    def __post_init__(self):
        if not 0 <= self.register <= PRBS15_MASK:
            raise InvalidParameter(f"PRBS15 register {self.register:#x} wider than 15 bits")


def prbs15_next(state: Prbs15State) -> tuple[int, Prbs15State]:
    r = state.register
    if r == 0:
        raise ZeroState("PRBS15 register is all zeros")
    bit = (r >> 14) & 1
    feedback = bit ^ ((r >> 13) & 1)
    return bit, Prbs15State(((r << 1) | feedback) & PRBS15_MASK)


@lru_cache(maxsize=1)
def _prbs15_period() -> tuple[np.ndarray, np.ndarray, dict]:
    """One full period from the all-ones seed: output bits, states, state -> index."""
    bits = np.empty(PRBS15_PERIOD, dtype=np.uint8)
    states = np.empty(PRBS15_PERIOD, dtype=np.int64)
    state = Prbs15State()
    for i in range(PRBS15_PERIOD):
        states[i] = state.register
        bits[i], state = prbs15_next(state)
    index = {int(s): i for i, s in enumerate(states)}
    bits.setflags(write=False)
    states.setflags(write=False)
    return bits, states, index


def prbs15_bits(state: Prbs15State, count: int) -> tuple[np.ndarray, Prbs15State]:
    """Block form of `count` successive prbs15_next calls."""
    if state.register == 0:
        raise ZeroState("PRBS15 register is all zeros")
    bits, states, index = _prbs15_period()
    start = index[state.register]
    out = bits[(start + np.arange(count, dtype=np.int64)) % PRBS15_PERIOD]
    return out.copy(), Prbs15State(int(states[(start + count) % PRBS15_PERIOD]))


@dataclass(frozen=True)
class CheckResult:
    errors: int
    bits_checked: int
    sync_index: int

    @property
    def ber(self) -> float:
        return self.errors / self.bits_checked if self.bits_checked else 0.0


class Prbs15Checker:
    """
    Error counter against a local PRBS15 generator.

    Synchronisation: load the register from 15 received bits, verify the next
    `verify_bits` against the free-running prediction, restart after the first
    mismatch. An all-zero load is rejected since the register would never leave it.
    """

    def __init__(self, verify_bits: int = PRBS_VERIFY_BITS, sync_budget: int = PRBS_SYNC_BUDGET):
        self.verify_bits = verify_bits
        self.sync_budget = sync_budget

    def check(self, received: np.ndarray) -> CheckResult:
        received = np.asarray(received, dtype=np.uint8)
        table, _, index = _prbs15_period()
        weights = 1 << np.arange(PRBS_LOAD_BITS - 1, -1, -1, dtype=np.int64)
        pos = 0
        while pos <= self.sync_budget and pos + PRBS_LOAD_BITS + self.verify_bits <= received.size:
            register = int(received[pos:pos + PRBS_LOAD_BITS] @ weights)
            if register == 0:
                pos += 1
                continue
            start = index[register] + PRBS_LOAD_BITS
            verify_at = pos + PRBS_LOAD_BITS
            expected = table[(start + np.arange(self.verify_bits)) % PRBS15_PERIOD]
            mismatch = np.flatnonzero(expected != received[verify_at:verify_at + self.verify_bits])
            if mismatch.size:
                pos = verify_at + int(mismatch[0]) + 1
                continue
            rest = received[verify_at:]
            expected = table[(start + np.arange(rest.size, dtype=np.int64)) % PRBS15_PERIOD]
            errors = int(np.count_nonzero(expected != rest))
            logger.debug(f"PRBS15 checker synchronised at bit {pos}, {errors} errors in {rest.size} bits")
            return CheckResult(errors, int(rest.size), pos)
        raise SyncFailed(f"PRBS15 checker did not synchronise within {self.sync_budget} bits "
                         f"({received.size} received)")


def manchester_encode(bits) -> np.ndarray:
    """Each bit b becomes the pair (b, not b): D_i before its complement."""
    bits = np.asarray(bits, dtype=np.uint8)
    return np.column_stack((bits, 1 - bits)).ravel()


def manchester_decode(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 2:
        raise OddLength(f"Manchester stream of {bits.size} bits has odd length")
    pairs = bits.reshape(-1, 2)
    bad = np.flatnonzero(pairs[:, 0] == pairs[:, 1])
    if bad.size:
        i = int(bad[0])
        raise InvalidPair(i, (int(pairs[i, 0]), int(pairs[i, 1])))
    return pairs[:, 0].copy()


def manchester_decode_lenient(bits) -> tuple[np.ndarray, int]:
    """Decode keeping the first bit of invalid pairs; returns (bits, invalid pair count)."""
    bits = np.asarray(bits, dtype=np.uint8)
    pairs = bits[: bits.size - bits.size % 2].reshape(-1, 2)
    invalid = int(np.count_nonzero(pairs[:, 0] == pairs[:, 1]))
    if invalid:
        logger.warning(f"Manchester decode: {invalid} invalid pairs in {pairs.shape[0]}")
    return pairs[:, 0].copy(), invalid


@dataclass(frozen=True)
class ScramblerState:
    """Last 7 line bits; bit k-1 holds the bit sent k steps ago."""
    register: int = 0

    def __post_init__(self):
        if not 0 <= self.register <= SCRAMBLER_MASK:
            raise InvalidParameter(f"scrambler register {self.register:#x} wider than {SCRAMBLER_LENGTH} bits")


def scramble(state: ScramblerState, bits) -> tuple[np.ndarray, ScramblerState]:
    """Multiplicative scrambler x^7 + x^6 + 1: y_t = x_t ^ y_(t-6) ^ y_(t-7)."""
    r = state.register
    out = []
    for x in np.asarray(bits, dtype=np.uint8).tolist():
        y = x ^ ((r >> 5) & 1) ^ ((r >> 6) & 1)
        r = ((r << 1) | y) & SCRAMBLER_MASK
        out.append(y)
    return np.array(out, dtype=np.uint8), ScramblerState(r)


def descramble(state: ScramblerState, bits) -> tuple[np.ndarray, ScramblerState]:
    """Inverse of scramble; self-synchronises after 7 received bits."""
    y = np.asarray(bits, dtype=np.uint8)
    history = np.array([(state.register >> k) & 1 for k in range(SCRAMBLER_LENGTH - 1, -1, -1)], dtype=np.uint8)
    ext = np.concatenate((history, y))
    n = y.size
    x = y ^ ext[1:1 + n] ^ ext[0:n]
    tail = ext[-SCRAMBLER_LENGTH:]
    register = 0
    for k in range(1, SCRAMBLER_LENGTH + 1):
        register |= int(tail[-k]) << (k - 1)
    return x, ScramblerState(register)


def pre_encode(kind: PreEncoder, bits, scrambler_state: ScramblerState | None = None) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if kind == PreEncoder.MANCHESTER:
        return manchester_encode(bits)
    if kind == PreEncoder.SCRAMBLER:
        return scramble(scrambler_state or ScramblerState(), bits)[0]
    return bits.copy()


def pre_decode(kind: PreEncoder, bits) -> tuple[np.ndarray, int]:
    """Undo a pre-encoder on received line bits; returns (user bits, invalid Manchester pairs)."""
    bits = np.asarray(bits, dtype=np.uint8)
    if kind == PreEncoder.MANCHESTER:
        return manchester_decode_lenient(bits)
    if kind == PreEncoder.SCRAMBLER:
        return descramble(ScramblerState(), bits)[0], 0
    return bits.copy(), 0


def user_bits_needed(kind: PreEncoder, line_bits: int) -> int:
    if kind == PreEncoder.MANCHESTER:
        return (line_bits + 1) // 2
    return line_bits


@dataclass(frozen=True)
class DisparityTrace:
    """Running sum of +1 per high slot and -1 per low slot."""
    values: np.ndarray

    @property
    def max_abs(self) -> int:
        return int(np.abs(self.values).max(initial=0))

    @property
    def final(self) -> int:
        return int(self.values[-1]) if self.values.size else 0

    @property
    def zero_crossings(self) -> np.ndarray:
        """Slot indices where the running sum is back at zero."""
        return np.flatnonzero(self.values == 0)

    def returns_to_zero_every(self, period: int) -> bool:
        return bool(np.all(self.values[period - 1::period] == 0))


def running_disparity(slots) -> DisparityTrace:
    slots = np.asarray(slots, dtype=np.int64).ravel()
    return DisparityTrace(np.cumsum(2 * slots - 1))


def longest_run(bits) -> int:
    """Length of the longest run of identical bits."""
    bits = np.asarray(bits, dtype=np.int8)
    if bits.size == 0:
        return 0
    change = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate(([0], change, [bits.size]))
    return int(np.diff(bounds).max())
