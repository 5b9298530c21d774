# Topology
# Distribution networks of transmitter, fanout and receiver nodes: JSON documents, validation and evaluation

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from graphlib import TopologicalSorter, CycleError

import numpy as np

from config import LOG_LEVEL, FS_PER_SECOND, DEFAULT_F0, RESOLUTION_FS, BUFFER_DELAY, FF_DELAY, PRBS_SYNC_BUDGET
from codec import parse_scheme
from stream import PreEncoder, PRBS15_SEED
from waveform import EdgeWaveform, JitterModel, inject_jitter, measure, period_ticks
from pll import PllConfig
from netlink import (TxSpec, RxSpec, FanoutSpec, FanoutMode, Checker, DataSource, DataKind, ObservationMetrics,
                     MetricsReport, transmit, receive, fanout_node)
from exceptions import CdcmError, TopologyError, ScenarioError, InvalidParameter

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


class NodeKind(Enum):
    TX = "tx"
    FANOUT = "fanout"
    RX = "rx"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: NodeKind
    spec: TxSpec | FanoutSpec | RxSpec
    channel: JitterModel = field(default_factory=JitterModel)

    @property
    def output_count(self) -> int:
        if self.kind == NodeKind.TX:
            return 1
        if self.kind == NodeKind.FANOUT:
            return self.spec.outputs
        return 0


@dataclass(frozen=True)
class Edge:
    source: str
    port: int
    target: str


@dataclass
class Topology:
    """
    A tree of nodes rooted at the single transmitter.

    observe lists the nodes whose output is measured; the first two leaves
    define the leaf-to-leaf skew.
    """
    nodes: dict[str, NodeSpec]
    edges: list[Edge]
    observe: list[str] = field(default_factory=list)
    leaves: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        roots = [n.id for n in self.nodes.values() if n.kind == NodeKind.TX]
        if len(roots) != 1:
            raise TopologyError(f"a topology needs exactly one tx node, found {len(roots)}")
        incoming = {node_id: [] for node_id in self.nodes}
        for e in self.edges:
            for end in (e.source, e.target):
                if end not in self.nodes:
                    raise TopologyError(f"edge {e.source}->{e.target} references unknown node '{end}'")
            source = self.nodes[e.source]
            if not 0 <= e.port < source.output_count:
                raise TopologyError(f"port {e.port} of '{e.source}' does not exist "
                                    f"({source.output_count} outputs)")
            incoming[e.target].append(e)
        for node_id, edges in incoming.items():
            expected = 0 if node_id == roots[0] else 1
            if len(edges) != expected:
                raise TopologyError(f"node '{node_id}' has {len(edges)} inputs, expected {expected}")
        try:
            order = list(TopologicalSorter({n: {e.source for e in incoming[n]} for n in self.nodes}).static_order())
        except CycleError as e:
            raise TopologyError(f"topology contains a cycle: {e.args[1]}") from None
        reached = {roots[0]}
        for node_id in order:
            if incoming[node_id] and incoming[node_id][0].source in reached:
                reached.add(node_id)
        for node in self.nodes.values():
            if node.kind == NodeKind.RX and node.id not in reached:
                raise TopologyError(f"rx node '{node.id}' is not reachable from the transmitter")
        for name in list(self.observe) + list(self.leaves):
            if name not in self.nodes:
                raise TopologyError(f"observation point '{name}' is not a node")
        self._order = order
        self._parent = {n: edges[0] for n, edges in incoming.items() if edges}

    @property
    def root(self) -> NodeSpec:
        return self.nodes[self._order[0]]

    @property
    def order(self) -> list[str]:
        return list(self._order)

    def parent(self, node_id: str) -> Edge | None:
        return self._parent.get(node_id)

    def path(self, node_id: str) -> list[str]:
        """Node ids from the transmitter down to node_id."""
        out = [node_id]
        while (edge := self.parent(out[-1])) is not None:
            out.append(edge.source)
        return out[::-1]


def chain(tx: TxSpec, fanout: FanoutSpec, hops: int, rx: RxSpec | None = None) -> Topology:
    """Transmitter followed by `hops` cascaded fanouts and a receiver."""
    if hops < 1:
        raise InvalidParameter(f"a chain needs at least one hop, got {hops}")
    nodes = {"tx": NodeSpec("tx", NodeKind.TX, tx)}
    edges = []
    previous = "tx"
    for k in range(1, hops + 1):
        node_id = f"hop{k}"
        nodes[node_id] = NodeSpec(node_id, NodeKind.FANOUT, replace(fanout, outputs=1))
        edges.append(Edge(previous, 0, node_id))
        previous = node_id
    nodes["rx"] = NodeSpec("rx", NodeKind.RX, rx or RxSpec())
    edges.append(Edge(previous, 0, "rx"))
    return Topology(nodes, edges, observe=[f"hop{k}" for k in range(1, hops + 1)] + ["rx"], leaves=["rx"])


def tree(tx: TxSpec, fanout: FanoutSpec, branches: int = 2, leaves_per_branch: int = 1,
         rx: RxSpec | None = None) -> Topology:
    """Two-stage tree: trunk fanout, `branches` branch fanouts, receivers at the leaves."""
    nodes = {"tx": NodeSpec("tx", NodeKind.TX, tx),
             "trunk": NodeSpec("trunk", NodeKind.FANOUT, replace(fanout, outputs=branches))}
    edges = [Edge("tx", 0, "trunk")]
    leaves = []
    for b in range(branches):
        branch = f"branch{b + 1}"
        nodes[branch] = NodeSpec(branch, NodeKind.FANOUT, replace(fanout, outputs=leaves_per_branch))
        edges.append(Edge("trunk", b, branch))
        for k in range(leaves_per_branch):
            leaf = f"leaf{b + 1}{k + 1}"
            nodes[leaf] = NodeSpec(leaf, NodeKind.RX, rx or RxSpec())
            edges.append(Edge(branch, k, leaf))
            leaves.append(leaf)
    observe = ["trunk"] + [f"branch{b + 1}" for b in range(branches)] + leaves
    return Topology(nodes, edges, observe=observe, leaves=leaves)


def read_field(doc: dict, key: str, default, path: str, kind=float):
    value = doc.get(key, default)
    if value is None:
        return None
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError(f"expected true/false, got {value!r}")
            return value
        if kind is int and (isinstance(value, bool) or not float(value).is_integer()):
            raise TypeError(f"expected an integer, got {value!r}")
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ScenarioError(str(e), field=f"{path}.{key}" if path else key) from None


def _build(path: str, factory, *args, **kwargs):
    """Run a spec constructor, reporting its errors against the document field."""
    try:
        return factory(*args, **kwargs)
    except (CdcmError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(str(e), field=path) from None


def _enum(doc: dict, key: str, enum_type, default, path: str):
    value = doc.get(key, default.value)
    try:
        return enum_type(str(value).lower())
    except ValueError:
        choices = ", ".join(m.value for m in enum_type)
        raise ScenarioError(f"'{value}' is not one of {choices}", field=f"{path}.{key}" if path else key) from None


def jitter_from_dict(doc: dict | None, path: str) -> JitterModel:
    doc = doc or {}
    return _build(path, JitterModel,
                  random_sigma=read_field(doc, "random_sigma", 0.0, path),
                  periodic_amplitude=read_field(doc, "periodic_amplitude", 0.0, path),
                  periodic_frequency=read_field(doc, "periodic_frequency", 0.0, path),
                  seed=read_field(doc, "seed", 0, path, int))


def pll_from_dict(doc: dict | None, path: str, f0: float) -> PllConfig:
    """
    PLL block of a document. Gains come from kp/ki or from a bandwidth fraction
    (with optional damping). The sampling phase belongs to the receiver and is
    rejected here.
    """
    doc = doc or {}
    kwargs = {
        "nominal_f0": f0,
        "pre_divider": read_field(doc, "pre_divider", 1, path, int),
        "multiplier": read_field(doc, "multiplier", 1, path, int),
        "zero_delay": read_field(doc, "zero_delay", True, path, bool),
        "static_offset": read_field(doc, "static_offset", 0.0, path),
        "insertion_delay": read_field(doc, "insertion_delay", 0.0, path),
    }
    for key in ("lock_threshold", "lock_count"):
        if key in doc:
            kwargs[key] = read_field(doc, key, None, path, int if key == "lock_count" else float)
    for key in ("phase_deg", "phase_offset"):
        if key in doc:
            raise ScenarioError("the sampling phase is set on the receiver (sample_phase or phase_deg)",
                                field=f"{path}.{key}")
    if "bandwidth" in doc:
        damping = read_field(doc, "damping", 0.707, path)
        return _build(f"{path}.bandwidth", PllConfig.from_bandwidth, read_field(doc, "bandwidth", None, path),
                      damping, **kwargs)
    kwargs["kp"] = read_field(doc, "kp", 0.5, path)
    kwargs["ki"] = read_field(doc, "ki", 0.05, path)
    return _build(path, PllConfig, **kwargs)


def data_from_dict(doc: dict | None, path: str) -> DataSource:
    doc = doc or {}
    kind = _enum(doc, "kind", DataKind, DataKind.PRBS15, path)
    if kind == DataKind.PRBS15:
        return _build(path, DataSource.prbs15, read_field(doc, "seed", PRBS15_SEED, path, int))
    if kind == DataKind.CONSTANT:
        return _build(path, DataSource.constant, read_field(doc, "bit", 0, path, int))
    if kind == DataKind.ALTERNATING:
        return DataSource.alternating()
    return _build(f"{path}.bits", DataSource.explicit, doc.get("bits", []))


def tx_from_dict(doc: dict, path: str, resolution_fs: int = RESOLUTION_FS) -> TxSpec:
    if "scheme" not in doc:
        raise ScenarioError("missing scheme", field=f"{path}.scheme" if path else "scheme")
    scheme = _build(f"{path}.scheme" if path else "scheme", parse_scheme, str(doc["scheme"]))
    return _build(path, TxSpec,
                  scheme=scheme,
                  f0=read_field(doc, "f0", DEFAULT_F0, path),
                  pre_encoder=_enum(doc, "pre_encoder", PreEncoder, PreEncoder.NONE, path),
                  data=data_from_dict(doc.get("data"), f"{path}.data" if path else "data"),
                  duty_setting=read_field(doc, "duty_setting", None, path),
                  eo_delay=read_field(doc, "eo_delay", 0.0, path),
                  scrambler_seed=read_field(doc, "scrambler_seed", 0, path, int),
                  resolution_fs=resolution_fs)


def rx_from_dict(doc: dict | None, path: str, f0: float) -> RxSpec:
    doc = doc or {}
    if "phase_deg" in doc:
        sample_phase = read_field(doc, "phase_deg", None, path) / 360.0
    else:
        sample_phase = read_field(doc, "sample_phase", 0.5, path)
    return _build(path, RxSpec,
                  pll=pll_from_dict(doc.get("pll"), f"{path}.pll", f0),
                  sample_phase=sample_phase,
                  checker=_enum(doc, "checker", Checker, Checker.PRBS15, path),
                  sync_budget=read_field(doc, "sync_budget", PRBS_SYNC_BUDGET, path, int),
                  cdr_bypass=read_field(doc, "cdr_bypass", False, path, bool))


def fanout_from_dict(doc: dict, path: str, tx: TxSpec) -> FanoutSpec:
    return _build(path, FanoutSpec,
                  scheme=tx.line_scheme,
                  mode=_enum(doc, "mode", FanoutMode, FanoutMode.REPEATER, path),
                  outputs=read_field(doc, "outputs", 2, path, int),
                  buffer_delay=read_field(doc, "buffer_delay", BUFFER_DELAY, path),
                  buffer_jitter_sigma=read_field(doc, "buffer_jitter_sigma", 0.0, path),
                  ff_delay=read_field(doc, "ff_delay", FF_DELAY, path),
                  ff_jitter_sigma=read_field(doc, "ff_jitter_sigma", 0.0, path),
                  pll=pll_from_dict(doc.get("pll"), f"{path}.pll", tx.f0),
                  repeater_slots=read_field(doc, "repeater_slots", None, path, int))


def load_topology(document: dict, resolution_fs: int = RESOLUTION_FS) -> Topology:
    """
    Build a topology from its JSON form.

    Nodes: {"id", "kind": tx|fanout|rx, ...spec fields}; edges: {"from", "from_port",
    "to", "to_port"}; optional "observe" and "leaves" id lists.
    """
    if not isinstance(document, dict):
        raise ScenarioError("topology must be a JSON object", field="topology")
    raw_nodes = document.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ScenarioError("topology needs a non-empty nodes array", field="topology.nodes")

    tx_docs = [(i, n) for i, n in enumerate(raw_nodes) if isinstance(n, dict) and n.get("kind") == "tx"]
    if len(tx_docs) != 1:
        raise TopologyError(f"a topology needs exactly one tx node, found {len(tx_docs)}")
    tx_index, tx_doc = tx_docs[0]
    tx = tx_from_dict(tx_doc, f"topology.nodes[{tx_index}]", resolution_fs)

    nodes = {}
    for i, raw in enumerate(raw_nodes):
        path = f"topology.nodes[{i}]"
        if not isinstance(raw, dict) or "id" not in raw:
            raise ScenarioError("node needs an id", field=path)
        node_id = str(raw["id"])
        if node_id in nodes:
            raise TopologyError(f"duplicate node id '{node_id}'")
        kind = _enum(raw, "kind", NodeKind, NodeKind.RX, path)
        if kind == NodeKind.TX:
            node = NodeSpec(node_id, kind, tx, jitter_from_dict(raw.get("channel"), f"{path}.channel"))
        elif kind == NodeKind.FANOUT:
            node = NodeSpec(node_id, kind, fanout_from_dict(raw, path, tx))
        else:
            node = NodeSpec(node_id, kind, rx_from_dict(raw, path, tx.f0))
        nodes[node_id] = node

    edges = []
    for i, raw in enumerate(document.get("edges", [])):
        path = f"topology.edges[{i}]"
        if not isinstance(raw, dict) or "from" not in raw or "to" not in raw:
            raise ScenarioError("edge needs 'from' and 'to'", field=path)
        if read_field(raw, "to_port", 0, path, int) != 0:
            raise TopologyError(f"edge {i}: nodes have a single input port 0")
        edges.append(Edge(str(raw["from"]), read_field(raw, "from_port", 0, path, int), str(raw["to"])))
    return Topology(nodes, edges, observe=[str(x) for x in document.get("observe", [])],
                    leaves=[str(x) for x in document.get("leaves", [])])


def _match_cycles(rising: np.ndarray, source: np.ndarray, nominal: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Source cycle index of every observed rising edge, and the edges that match one."""
    j = np.rint((rising - nominal - source[0]) / T).astype(np.int64)
    ok = (j >= 0) & (j < source.size)
    return j[ok], rising[ok]


def run_topology(t: Topology, n_cycles: int, seed: int = 0, runs: int = 1) -> MetricsReport:
    """
    Propagate the transmitter waveform through every node, `runs` times.

    Each run releases every PLL one carrier period later than the previous one
    and draws fresh jitter seeds. Latency is measured from each source rising edge
    to the observed rising edge of the same carrier cycle.
    """
    if runs < 1:
        raise InvalidParameter(f"runs must be >= 1, got {runs}")
    tx = t.root.spec
    res = tx.resolution_fs
    T = period_ticks(tx.f0, res)
    scale = res / FS_PER_SECOND
    index = {node_id: k for k, node_id in enumerate(t.order)}

    nominal = {}
    for node_id in t.order:
        node = t.nodes[node_id]
        edge = t.parent(node_id)
        upstream = nominal[edge.source] if edge else 0
        nominal[node_id] = upstream + (node.spec.nominal_delay(tx.f0, res) if node.kind == NodeKind.FANOUT else 0)

    points = list(dict.fromkeys(list(t.observe) + list(t.leaves)))
    report = MetricsReport({p: ObservationMetrics(p) for p in points}, leaves=tuple(t.leaves))
    samples = {p: [] for p in points}
    skews = []

    for run in range(runs):
        start_time = run * T * scale
        source, _ = transmit(tx, n_cycles)
        src_rising = source.rising_edges()
        channel = t.root.channel
        outputs: dict[str, list[EdgeWaveform]] = {
            t.root.id: [inject_jitter(source, replace(channel, seed=channel.seed + run))]}
        observed: dict[str, EdgeWaveform] = {t.root.id: outputs[t.root.id][0]}

        for node_id in t.order[1:]:
            node = t.nodes[node_id]
            edge = t.parent(node_id)
            incoming = outputs[edge.source][edge.port]
            node_seed = seed * 1_000_000 + run * 10_000 + index[node_id] * 100
            if node.kind == NodeKind.FANOUT:
                outs = fanout_node(incoming, replace(node.spec, seed=node_seed), start_time)
                outputs[node_id] = outs
                observed[node_id] = outs[0]
            else:
                rx = replace(node.spec, start_time=start_time)
                recovered, _, rx_report = receive(incoming, rx, tx.line_scheme)
                observed[node_id] = recovered
                if node_id in report.observations:
                    rx_obs = rx_report.observations["rx"]
                    obs = report.observations[node_id]
                    obs.errors, obs.bits_checked = rx_obs.errors, rx_obs.bits_checked
                    obs.symbol_errors, obs.invalid_pairs = rx_obs.symbol_errors, rx_obs.invalid_pairs
                    obs.lock_index = rx_obs.lock_index
            logger.debug(f"run {run}: node {node_id} done")

        matched = {}
        for p in points:
            rising = observed[p].rising_edges()
            j, edges = _match_cycles(rising, src_rising, nominal[p], T)
            matched[p] = (j, edges)
            latency = edges - src_rising[j]
            samples[p].append(latency * scale)
            obs = report.observations[p]
            obs.nominal_latency = nominal[p] * scale
            obs.latency_per_run.append(float(latency.mean()) * scale if latency.size else float("nan"))
            node = t.nodes[p]
            if run == runs - 1 and not (node.kind == NodeKind.FANOUT and node.spec.mode == FanoutMode.EXTRACTOR):
                try:
                    obs.timing = measure(observed[p], tx.f0)
                except CdcmError as e:
                    logger.warning(f"no timing metrics at {p}: {e}")

        if len(t.leaves) >= 2:
            (ja, ta), (jb, tb) = matched[t.leaves[0]], matched[t.leaves[1]]
            _, ia, ib = np.intersect1d(ja, jb, assume_unique=False, return_indices=True)
            skews.append((ta[ia] - tb[ib]) * scale)

    for p in points:
        report.observations[p].latency_samples = np.concatenate(samples[p]) if samples[p] else np.empty(0)
    if skews:
        report.leaf_skew = np.concatenate(skews)
    logger.info(f"topology run: {len(t.nodes)} nodes, {runs} runs, {n_cycles} cycles")
    return report
