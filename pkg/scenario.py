# Scenario Documents
# Loading and validating the JSON scenario files run by the command line

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

from config import LOG_LEVEL, RESOLUTION_FS
from waveform import JitterModel
from netlink import TxSpec, RxSpec
from topology import Topology, load_topology, tx_from_dict, rx_from_dict, jitter_from_dict, read_field
from exceptions import ScenarioError

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DEFAULT_N_BITS = 100_000
DEFAULT_EYE_BINS = 64


class ScenarioKind(Enum):
    ROUNDTRIP = "roundtrip"
    TOPOLOGY = "topology"
    EYE = "eye"


@dataclass(frozen=True)
class Scenario:
    """One experiment: the parsed specs of a scenario document."""
    name: str
    kind: ScenarioKind
    seed: int
    tx: TxSpec | None = None
    rx: RxSpec | None = None
    channel: JitterModel = field(default_factory=JitterModel)
    n_bits: int = DEFAULT_N_BITS
    recovery_cycles: int = 20_000
    duty_sweep: tuple[float, ...] = ()
    topology: Topology | None = None
    n_cycles: int = 10_000
    runs: int = 1
    eye_bins: int = DEFAULT_EYE_BINS
    eye_offset: float = 0.0
    eye_cycles: int = 10_000
    expect: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed, channel=replace(self.channel, seed=seed))


def _positive_int(doc: dict, key: str, default: int, minimum: int = 1) -> int:
    value = read_field(doc, key, default, "", int)
    if value < minimum:
        raise ScenarioError(f"must be >= {minimum}, got {value}", field=key)
    return value


def scenario_from_dict(doc: dict, resolution_fs: int = RESOLUTION_FS, default_seed: int = 1) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object", line=1)
    name = doc.get("name")
    if not isinstance(name, str) or not name.strip():
        raise ScenarioError("missing scenario name", field="name")
    default_kind = "topology" if "topology" in doc else "roundtrip"
    try:
        kind = ScenarioKind(str(doc.get("kind", default_kind)).lower())
    except ValueError:
        raise ScenarioError(f"unknown scenario kind '{doc.get('kind')}'", field="kind") from None
    seed = read_field(doc, "seed", default_seed, "", int)
    expect = doc.get("expect", {})
    if not isinstance(expect, dict):
        raise ScenarioError("expect must be an object", field="expect")

    if kind == ScenarioKind.TOPOLOGY:
        if "topology" not in doc:
            raise ScenarioError("topology scenario without a topology", field="topology")
        return Scenario(
            name=name, kind=kind, seed=seed,
            topology=load_topology(doc["topology"], resolution_fs),
            n_cycles=_positive_int(doc, "n_cycles", 10_000),
            runs=_positive_int(doc, "runs", 1),
            expect=expect,
        )

    tx = tx_from_dict(doc, "", resolution_fs)
    channel = replace(jitter_from_dict(doc.get("channel"), "channel"), seed=seed)
    rx_doc = dict(doc.get("rx") or {})
    if "pll" not in rx_doc and "pll" in doc:
        rx_doc["pll"] = doc["pll"]
    rx = rx_from_dict(rx_doc, "rx", tx.f0)
    sweep = doc.get("sweep", {})
    settings = sweep.get("duty_settings", []) if isinstance(sweep, dict) else None
    if not isinstance(settings, list):
        raise ScenarioError("sweep.duty_settings must be a list", field="sweep.duty_settings")
    for k, pct in enumerate(settings):
        read_field({"v": pct}, "v", None, f"sweep.duty_settings[{k}]")
    eye = doc.get("eye") or {}
    if not isinstance(eye, dict):
        raise ScenarioError("eye must be an object", field="eye")
    return Scenario(
        name=name, kind=kind, seed=seed, tx=tx, rx=rx, channel=channel,
        n_bits=_positive_int(doc, "n_bits", DEFAULT_N_BITS, 1000),
        recovery_cycles=_positive_int(doc, "recovery_cycles", 20_000, 64),
        duty_sweep=tuple(float(p) for p in settings),
        eye_bins=read_field(eye, "bins", DEFAULT_EYE_BINS, "eye", int),
        eye_offset=read_field(eye, "offset", 0.0, "eye"),
        eye_cycles=read_field(eye, "cycles", 10_000, "eye", int),
        expect=expect,
    )


def load_scenario(path: str, resolution_fs: int = RESOLUTION_FS, default_seed: int = 1) -> Scenario:
    """
    Read and validate a scenario file.

    Raises:
        ScenarioError: empty file, malformed JSON (with its line) or an invalid field
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from None
    if not text.strip():
        raise ScenarioError(f"scenario file {path} is empty", line=1)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON in {path}: {e.msg}", line=e.lineno) from None
    scenario = scenario_from_dict(doc, resolution_fs, default_seed)
    logger.debug(f"loaded scenario '{scenario.name}' ({scenario.kind.value}) from {path}")
    return scenario
