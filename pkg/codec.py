# CDCM Codec
# Code variants and per-cycle symbol encoding/decoding between user symbols and N-slot cycle words

import math
import re
import logging
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping

import numpy as np

from config import LOG_LEVEL
from exceptions import (InvalidGeometry, InvalidParameter, SymbolOutOfRange, WordLengthMismatch,
                        BadHeader, NonUnaryPayload, UnknownWord)

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


class Variant(Enum):
    GENERAL_UNARY = "general_unary"
    MINIMAL_DISTORTION = "minimal_distortion"
    TERNARY4 = "ternary4"
    SPARSE20 = "sparse20"
    DUTY_MODULATED = "duty_modulated"


@dataclass(frozen=True)
class Symbol:
    """A user symbol: Idle when value is None, otherwise Data(value)."""
    value: int | None = None

    @classmethod
    def idle(cls) -> "Symbol":
        return cls(None)

    @classmethod
    def data(cls, value: int) -> "Symbol":
        if value < 0:
            raise SymbolOutOfRange(f"negative symbol value {value}")
        return cls(int(value))

    @property
    def is_idle(self) -> bool:
        return self.value is None

    def __str__(self) -> str:
        return "idle" if self.value is None else str(self.value)


IDLE = Symbol.idle()


@dataclass(frozen=True)
class CycleWord:
    """N binary slots of one carrier cycle, slot 0 transmitted first."""
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise InvalidGeometry(f"cycle word slots must be 0 or 1, got {self.bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text: str) -> "CycleWord":
        return cls(tuple(int(c) for c in text.strip()))

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def ones(self) -> int:
        return sum(self.bits)

    @property
    def duty(self) -> float:
        return self.ones / len(self.bits)

    def inverted(self) -> "CycleWord":
        return CycleWord(tuple(1 - b for b in self.bits))

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


def _unary_word(n: int, ones: int) -> CycleWord:
    return CycleWord((0, 1) + (1,) * ones + (0,) * (n - 2 - ones))


def _format_q(q: float) -> str:
    if abs(q - round(q)) < 1e-12:
        return str(int(round(q)))
    return f"{math.floor(q * 10) / 10:g}"


@dataclass(frozen=True)
class Scheme:
    """
    One CDCM code variant.

    The codebook is immutable; a reverse map and a dense slot table are built once
    so that encode/decode stay pure lookups.
    """
    name: str
    n: int
    p: int
    q: float
    variant: Variant
    codebook: Mapping[Symbol, CycleWord] = field(compare=False, hash=False)
    positive_edge: bool = True

    def __post_init__(self):
        book = dict(self.codebook)
        reverse = {}
        for symbol, word in book.items():
            if word.n != self.n:
                raise InvalidGeometry(f"{self.name}: word {word} has {word.n} slots, expected {self.n}")
            if word.bits in reverse:
                raise InvalidGeometry(f"{self.name}: duplicate codeword {word}")
            reverse[word.bits] = symbol
        object.__setattr__(self, "codebook", MappingProxyType(book))
        object.__setattr__(self, "_reverse", reverse)

        data = sorted((s for s in book if not s.is_idle), key=lambda s: s.value)
        if [s.value for s in data] != list(range(len(data))):
            raise InvalidGeometry(f"{self.name}: data symbols must be 0..k-1")
        rows = [book[s].bits for s in data]
        if IDLE in book:
            rows.append(book[IDLE].bits)
        table = np.array(rows, dtype=np.uint8).reshape(len(rows), self.n)
        table.setflags(write=False)
        object.__setattr__(self, "_data_symbols", tuple(data))
        object.__setattr__(self, "_table", table)

    @property
    def efficiency(self) -> float:
        return self.q / self.n

    @property
    def data_symbols(self) -> tuple[Symbol, ...]:
        return self._data_symbols

    @property
    def idle(self) -> Symbol | None:
        return IDLE if IDLE in self.codebook else None

    @property
    def alphabet(self) -> tuple[Symbol, ...]:
        return ((IDLE,) if IDLE in self.codebook else ()) + self._data_symbols

    @property
    def bits_per_cycle(self) -> int:
        k = len(self._data_symbols)
        return 0 if k < 2 else int(math.floor(math.log2(k)))

    @property
    def header(self) -> tuple[int, int]:
        return (0, 1) if self.positive_edge else (1, 0)

    @property
    def midpoint_slot(self) -> int:
        # Slot seen just before rising edge + T/2 (rising edge sits at slot 1).
        return (self.n + 1) // 2

    @property
    def midpoint_decodable(self) -> bool:
        """True when one sample at mid-period recovers the data bit of every data word."""
        if not self.positive_edge or self.bits_per_cycle != 1:
            return False
        mid = self.midpoint_slot
        return all(self.codebook[s].bits[mid] == s.value for s in self._data_symbols[:2])

    @property
    def is_n1(self) -> bool:
        """CDCM-N-1 family: one user bit per cycle at the carrier rate."""
        if self.variant in (Variant.MINIMAL_DISTORTION, Variant.DUTY_MODULATED):
            return self.bits_per_cycle == 1
        return self.variant == Variant.GENERAL_UNARY and self.n == 3 and self.p == 1

    def __str__(self) -> str:
        return self.name


def make_general_unary(n: int, p: int) -> Scheme:
    """
    Build CDCM-N-Q with P unary payload slots.

    Args:
        n: Unit intervals per carrier cycle (n >= 3)
        p: Payload slots (1 <= p <= n-2)

    Returns:
        Scheme mapping value u to "01" + 1^u 0^(p-u) + 0^(n-2-p)
    """
    if n < 3:
        raise InvalidGeometry(f"n={n}: a CDCM cycle needs at least 3 slots")
    if p < 1 or p > n - 2:
        raise InvalidGeometry(f"p={p} outside 1..{n - 2} for n={n}")
    q = math.log2(p + 1)
    book = {Symbol.data(u): _unary_word(n, u) for u in range(p + 1)}
    return Scheme(f"CDCM-{n}-{_format_q(q)}", n, p, q, Variant.GENERAL_UNARY, book)


def max_efficiency(n: int) -> float:
    """E_max = log2(n-1)/n for a serializer of n slots per cycle."""
    if n < 3:
        raise InvalidGeometry(f"n={n}: efficiency defined for n >= 3")
    return math.log2(n - 1) / n


def efficiency_table(n_max: int) -> list[tuple[int, float, float]]:
    if n_max < 3:
        raise InvalidParameter(f"n_max={n_max} must be >= 3")
    return [(n, math.log2(n - 1), max_efficiency(n)) for n in range(3, n_max + 1)]


def make_minimal_distortion(n: int) -> Scheme:
    """
    Build the minimal-distortion CDCM-N-1 code.

    Odd n = 2k+1 (k >= 1): 0 -> 01 1^(k-1) 0^k, 1 -> 01 1^k 0^(k-1), duty 0.5 -/+ 1/(2n).
    Even n = 2k (k >= 2): 0 -> 01 1^(k-2) 0^k, 1 -> 01 1^k 0^(k-2), duty 0.5 -/+ 1/n.
    The 4-slot case is served by make_ternary4().
    """
    if n < 3:
        raise InvalidGeometry(f"n={n}: CDCM-N-1 needs n >= 3")
    if n == 4:
        raise InvalidGeometry("n=4 has no minimal-distortion N-1 code (k >= 2 required); use make_ternary4()")
    if n % 2:
        k = (n - 1) // 2
        zero, one = k - 1, k
    else:
        k = n // 2
        zero, one = k - 2, k
    book = {Symbol.data(0): _unary_word(n, zero), Symbol.data(1): _unary_word(n, one)}
    return Scheme(f"CDCM-{n}-1", n, n - 2, 1.0, Variant.MINIMAL_DISTORTION, book)


def make_ternary4() -> Scheme:
    """CDCM-4-1.5: Idle is the pure 50 % clock, data 0/1 give 25 %/75 % duty."""
    book = {IDLE: _unary_word(4, 1), Symbol.data(0): _unary_word(4, 0), Symbol.data(1): _unary_word(4, 2)}
    return Scheme("CDCM-4-1.5", 4, 2, math.log2(3), Variant.TERNARY4, book)


def make_sparse20() -> Scheme:
    """CDCM-20-1.5: nine 1's / nine 0's when idle, 45 % and 55 % duty for data."""
    book = {IDLE: _unary_word(20, 9), Symbol.data(0): _unary_word(20, 8), Symbol.data(1): _unary_word(20, 10)}
    return Scheme("CDCM-20-1.5", 20, 18, math.log2(3), Variant.SPARSE20, book)


def make_duty_modulated(n: int, steps: int) -> Scheme:
    """
    Duty-setting family of a transmitter with an even n-slot serializer.

    Idle keeps n/2 high slots; data 0 and 1 move the falling edge by `steps` slots
    earlier or later. steps=0 gives a data-less pure clock.
    """
    if n < 4 or n % 2:
        raise InvalidGeometry(f"n={n}: duty settings need an even serializer width >= 4")
    half = n // 2
    if steps < 0 or steps > half - 1:
        raise InvalidGeometry(f"steps={steps} outside 0..{half - 1} for n={n}")
    percent = steps * 100 / n
    book = {IDLE: _unary_word(n, half - 1)}
    if steps:
        book[Symbol.data(0)] = _unary_word(n, half - 1 - steps)
        book[Symbol.data(1)] = _unary_word(n, half - 1 + steps)
    return Scheme(f"CDCM-{n}-1 ±{percent:g}%", n, n - 2, 1.0 if steps else 0.0, Variant.DUTY_MODULATED, book)


def duty_setting_steps(n: int, percent: float) -> int:
    """Convert a ±percent duty setting into whole slots of an n-slot word."""
    steps = percent * n / 100
    if abs(steps - round(steps)) > 1e-9:
        raise InvalidGeometry(f"±{percent}% is not on the 1/{n} UI grid")
    return int(round(steps))


def mirror(scheme: Scheme) -> Scheme:
    """Negative-edge version of a scheme ("10" header), by bit inversion of every word."""
    book = {s: w.inverted() for s, w in scheme.codebook.items()}
    if scheme.positive_edge:
        name = scheme.name + " (negative edge)"
    else:
        name = scheme.name.removesuffix(" (negative edge)")
    return Scheme(name, scheme.n, scheme.p, scheme.q, scheme.variant, book, not scheme.positive_edge)


def encode_cycle(scheme: Scheme, symbol: Symbol | int) -> CycleWord:
    if isinstance(symbol, int):
        symbol = Symbol.data(symbol)
    try:
        return scheme.codebook[symbol]
    except KeyError:
        raise SymbolOutOfRange(f"symbol {symbol} not in the {scheme.name} alphabet") from None


def decode_cycle(scheme: Scheme, word: CycleWord | str) -> Symbol:
    if isinstance(word, str):
        word = CycleWord.from_string(word)
    if word.n != scheme.n:
        raise WordLengthMismatch(f"word {word} has {word.n} slots, {scheme.name} uses {scheme.n}")
    bits = word.bits if scheme.positive_edge else tuple(1 - b for b in word.bits)
    if bits[:2] != (0, 1):
        raise BadHeader(f"word {word} lacks the {''.join(map(str, scheme.header))} header")
    payload = bits[2:]
    if any(a == 0 and b == 1 for a, b in zip(payload, payload[1:])):
        raise NonUnaryPayload(f"payload of {word} is not unary")
    try:
        return scheme._reverse[word.bits]
    except KeyError:
        raise UnknownWord(f"{word} is well-formed but not a {scheme.name} codeword") from None


def required_baud(scheme: Scheme, f0: float) -> float:
    """Line rate needed to carry f0: n slots per carrier cycle."""
    return scheme.n * f0


def encode_values(scheme: Scheme, values: np.ndarray) -> np.ndarray:
    """
    Vectorised encode_cycle.

    Args:
        scheme: Code to use
        values: Data values per cycle; negative entries mean Idle

    Returns:
        uint8 array of shape (cycles, n)
    """
    values = np.asarray(values, dtype=np.int64)
    k = len(scheme.data_symbols)
    if values.size and values.max(initial=-1) >= k:
        raise SymbolOutOfRange(f"value {int(values.max())} not in the {scheme.name} alphabet")
    index = values.copy()
    idle = index < 0
    if idle.any():
        if scheme.idle is None:
            raise SymbolOutOfRange(f"{scheme.name} has no Idle symbol")
        index[idle] = k
    return scheme._table[index]


def decode_words(scheme: Scheme, slots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Vectorised decode_cycle that flags instead of raising.

    Returns:
        (values, valid): values is -1 for Idle, 0 for undecodable words
    """
    slots = np.asarray(slots, dtype=np.int64)
    weights = np.int64(1) << np.arange(scheme.n, dtype=np.int64)
    codes = slots @ weights
    known = {}
    for symbol, word in scheme.codebook.items():
        known[int(np.dot(np.array(word.bits, dtype=np.int64), weights))] = -1 if symbol.is_idle else symbol.value
    keys = np.array(sorted(known), dtype=np.int64)
    mapped = np.array([known[k] for k in keys], dtype=np.int64)
    pos = np.clip(np.searchsorted(keys, codes), 0, len(keys) - 1)
    valid = keys[pos] == codes
    values = np.where(valid, mapped[pos], 0)
    return values, valid


def codebook_rows(scheme: Scheme) -> list[dict]:
    """Conformance rows `scheme,symbol,word,duty`, Idle first then data in value order."""
    return [{"scheme": scheme.name, "symbol": str(s), "word": str(scheme.codebook[s]),
             "duty": scheme.codebook[s].duty} for s in scheme.alphabet]


_NAME_RE = re.compile(r"^CDCM-(\d+)-(\d+(?:\.\d+)?)(?:@(\d+(?:\.\d+)?))?$", re.IGNORECASE)


def parse_scheme(name: str) -> Scheme:
    """
    Resolve a scheme name as written in scenario files.

    Accepts "ternary4", "sparse20", "CDCM-N-Q" and "CDCM-N-1@PCT" (duty setting).
    """
    text = name.strip()
    if text.lower() in ("ternary4", "cdcm-4-1.5"):
        return make_ternary4()
    if text.lower() in ("sparse20", "cdcm-20-1.5"):
        return make_sparse20()
    match = _NAME_RE.match(text)
    if not match:
        raise InvalidGeometry(f"unknown scheme name '{name}'")
    n = int(match.group(1))
    q_text = match.group(2)
    if match.group(3) is not None:
        if q_text != "1":
            raise InvalidGeometry(f"duty settings apply to CDCM-N-1 names, got '{name}'")
        return make_duty_modulated(n, duty_setting_steps(n, float(match.group(3))))
    if q_text == "1":
        return make_minimal_distortion(n)
    for p in range(1, n - 1):
        if _format_q(math.log2(p + 1)) == q_text:
            return make_general_unary(n, p)
    raise InvalidGeometry(f"no payload size gives Q={q_text} for n={n}")
