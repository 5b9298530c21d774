import unittest

import numpy as np

import netlink
from codec import make_minimal_distortion
from pll import PllConfig
from netlink import TxSpec, RxSpec, FanoutSpec, FanoutMode
from topology import NodeKind, NodeSpec, Edge, Topology, chain, tree, load_topology, run_topology
from exceptions import TopologyError, ScenarioError, InvalidParameter

F0 = 125e6


def tx_spec() -> TxSpec:
    return TxSpec(make_minimal_distortion(20), F0, duty_setting=10)


def fanout_spec(**kwargs) -> FanoutSpec:
    return FanoutSpec(tx_spec().line_scheme, **kwargs)


def chain_document() -> dict:
    return {
        "nodes": [
            {"id": "tx", "kind": "tx", "scheme": "CDCM-20-1", "duty_setting": 10, "f0": F0},
            {"id": "hop1", "kind": "fanout", "outputs": 1, "pll": {"kp": 0.5}},
            {"id": "rx", "kind": "rx", "phase_deg": 135},
        ],
        "edges": [{"from": "tx", "to": "hop1"}, {"from": "hop1", "to": "rx"}],
        "observe": ["hop1", "rx"],
    }


class TestValidation(unittest.TestCase):
    def setUp(self):
        self.tx = NodeSpec("tx", NodeKind.TX, tx_spec())
        self.hop = NodeSpec("hop", NodeKind.FANOUT, fanout_spec(outputs=1))
        self.rx = NodeSpec("rx", NodeKind.RX, RxSpec())

    def test_accepts_a_simple_chain(self):
        t = Topology({"tx": self.tx, "hop": self.hop, "rx": self.rx},
                     [Edge("tx", 0, "hop"), Edge("hop", 0, "rx")])
        self.assertEqual(t.order, ["tx", "hop", "rx"])
        self.assertEqual(t.path("rx"), ["tx", "hop", "rx"])
        self.assertIsNone(t.parent("tx"))

    def test_two_transmitters(self):
        other = NodeSpec("tx2", NodeKind.TX, tx_spec())
        with self.assertRaises(TopologyError):
            Topology({"tx": self.tx, "tx2": other}, [])

    def test_cycle(self):
        second = NodeSpec("hop2", NodeKind.FANOUT, fanout_spec(outputs=1))
        with self.assertRaisesRegex(TopologyError, "cycle"):
            Topology({"tx": self.tx, "hop": self.hop, "hop2": second},
                     [Edge("hop", 0, "hop2"), Edge("hop2", 0, "hop")])

    def test_port_out_of_range(self):
        with self.assertRaisesRegex(TopologyError, "port"):
            Topology({"tx": self.tx, "hop": self.hop, "rx": self.rx},
                     [Edge("tx", 0, "hop"), Edge("hop", 1, "rx")])

    def test_missing_input(self):
        with self.assertRaisesRegex(TopologyError, "inputs"):
            Topology({"tx": self.tx, "hop": self.hop, "rx": self.rx}, [Edge("tx", 0, "hop")])

    def test_unknown_node_in_edge(self):
        with self.assertRaises(TopologyError):
            Topology({"tx": self.tx, "rx": self.rx}, [Edge("tx", 0, "rx"), Edge("ghost", 0, "rx")])

    def test_unknown_observation_point(self):
        with self.assertRaisesRegex(TopologyError, "observation"):
            Topology({"tx": self.tx, "rx": self.rx}, [Edge("tx", 0, "rx")], observe=["hop"])


class TestBuilders(unittest.TestCase):
    def test_chain(self):
        t = chain(tx_spec(), fanout_spec(), 4)
        self.assertEqual(t.order, ["tx", "hop1", "hop2", "hop3", "hop4", "rx"])
        self.assertEqual(t.nodes["hop2"].spec.outputs, 1)
        self.assertEqual(t.leaves, ["rx"])
        with self.assertRaises(InvalidParameter):
            chain(tx_spec(), fanout_spec(), 0)

    def test_tree(self):
        t = tree(tx_spec(), fanout_spec())
        self.assertEqual(t.leaves, ["leaf11", "leaf21"])
        self.assertEqual(t.nodes["trunk"].spec.outputs, 2)
        self.assertEqual(t.path("leaf21"), ["tx", "trunk", "branch2", "leaf21"])


class TestLoadTopology(unittest.TestCase):
    def test_loads_nodes_and_edges(self):
        t = load_topology(chain_document())
        self.assertEqual(t.nodes["hop1"].kind, NodeKind.FANOUT)
        self.assertEqual(t.nodes["hop1"].spec.mode, FanoutMode.REPEATER)
        self.assertAlmostEqual(t.nodes["rx"].spec.sample_phase, 0.375)
        self.assertEqual(t.nodes["hop1"].spec.pll.phase_offset, 0.5)
        self.assertEqual(t.nodes["tx"].spec.line_scheme.name, "CDCM-20-1 ±10%")
        self.assertEqual(t.observe, ["hop1", "rx"])

    def test_bad_field_is_reported_with_its_path(self):
        doc = chain_document()
        doc["nodes"][1]["outputs"] = "two"
        with self.assertRaises(ScenarioError) as ctx:
            load_topology(doc)
        self.assertEqual(ctx.exception.field, "topology.nodes[1].outputs")

    def test_fanout_pll_phase_is_rejected(self):
        for key, value in (("phase_deg", 135), ("phase_offset", 0.375)):
            doc = chain_document()
            doc["nodes"][1]["pll"] = {key: value}
            with self.assertRaises(ScenarioError) as ctx:
                load_topology(doc)
            self.assertEqual(ctx.exception.field, f"topology.nodes[1].pll.{key}")

    def test_receiver_pll_phase_is_rejected(self):
        doc = chain_document()
        doc["nodes"][2]["pll"] = {"phase_deg": 135}
        with self.assertRaises(ScenarioError) as ctx:
            load_topology(doc)
        self.assertEqual(ctx.exception.field, "topology.nodes[2].pll.phase_deg")

    def test_specs_refuse_a_shifted_pll(self):
        shifted = PllConfig(phase_offset=0.375)
        with self.assertRaises(InvalidParameter):
            fanout_spec(pll=shifted)
        with self.assertRaises(InvalidParameter):
            RxSpec(pll=shifted)

    def test_missing_scheme(self):
        doc = chain_document()
        del doc["nodes"][0]["scheme"]
        with self.assertRaises(ScenarioError) as ctx:
            load_topology(doc)
        self.assertEqual(ctx.exception.field, "topology.nodes[0].scheme")

    def test_unknown_kind(self):
        doc = chain_document()
        doc["nodes"][1]["kind"] = "splitter"
        with self.assertRaises(ScenarioError) as ctx:
            load_topology(doc)
        self.assertEqual(ctx.exception.field, "topology.nodes[1].kind")

    def test_input_port_other_than_zero(self):
        doc = chain_document()
        doc["edges"][1]["to_port"] = 1
        with self.assertRaises(TopologyError):
            load_topology(doc)

    def test_duplicate_ids(self):
        doc = chain_document()
        doc["nodes"].append({"id": "rx", "kind": "rx"})
        with self.assertRaisesRegex(TopologyError, "duplicate"):
            load_topology(doc)

    def test_empty_nodes(self):
        with self.assertRaises(ScenarioError):
            load_topology({"nodes": []})


class TestRunTopology(unittest.TestCase):
    def test_ideal_chain_latency_is_constant(self):
        t = chain(tx_spec(), fanout_spec(), 4)
        report = run_topology(t, 4000, runs=10)
        rx = report.observations["rx"]
        self.assertEqual(len(rx.latency_per_run), 10)
        self.assertEqual(len(set(rx.latency_per_run)), 1)
        self.assertAlmostEqual(rx.nominal_latency, 2.4e-9, delta=1e-18)
        self.assertAlmostEqual(rx.latency_per_run[0], rx.nominal_latency, delta=1e-18)
        self.assertEqual(rx.errors, 0)
        self.assertGreater(rx.bits_checked, 0)
        hop1 = report.observations["hop1"]
        self.assertAlmostEqual(hop1.latency_per_run[0], 0.6e-9, delta=1e-18)

    def test_ideal_tree_has_no_skew(self):
        report = run_topology(tree(tx_spec(), fanout_spec()), 4000)
        self.assertGreater(report.leaf_skew.size, 3000)
        self.assertEqual(report.leaf_skew_rms, 0.0)

    def test_leaf_differential_jitter_follows_independent_hops(self):
        sigma = 1e-12
        pll = PllConfig(kp=1.0, ki=0.0)
        t = tree(tx_spec(), fanout_spec(ff_jitter_sigma=sigma, pll=pll), rx=RxSpec(pll=pll))
        report = run_topology(t, 20_000, seed=3)
        # trunk output ports and branch outputs are independent: two hops per path
        expected = sigma * np.sqrt(2 * 2)
        self.assertAlmostEqual(report.leaf_skew_std / expected, 1.0, delta=0.2)

    def test_leaf_skew_changes_sign_with_leaf_order(self):
        t = tree(tx_spec(), fanout_spec(ff_jitter_sigma=1e-12))
        report = run_topology(t, 3000, seed=3)
        swapped = Topology(t.nodes, t.edges, observe=t.observe, leaves=list(reversed(t.leaves)))
        swapped_report = run_topology(swapped, 3000, seed=3)
        self.assertGreater(report.leaf_skew.size, 0)
        self.assertTrue(np.any(report.leaf_skew != 0))
        self.assertTrue(np.array_equal(swapped_report.leaf_skew, -report.leaf_skew))

    def test_runs_must_be_positive(self):
        with self.assertRaises(InvalidParameter):
            run_topology(chain(tx_spec(), fanout_spec(), 1), 100, runs=0)

    def test_netlink_entry_point(self):
        t = chain(tx_spec(), fanout_spec(), 1)
        report = netlink.run_topology(t, 2000)
        self.assertEqual(report.observations["rx"].errors, 0)


if __name__ == '__main__':
    unittest.main()
