import io
import os
import json
import shutil
import tempfile
import unittest
from contextlib import redirect_stdout

import pyarrow.csv as pacsv

import cli
import report_writer
from config import SCENARIO_DIR, load_settings, save_settings
from codec import make_general_unary
from netlink import TxSpec, transmit
from scenario import ScenarioKind, load_scenario, scenario_from_dict
from scenario_worker import ScenarioWorker
from exceptions import ScenarioError, TopologyError, CdcmError

SMALL_LINK = {
    "name": "Small link",
    "scheme": "CDCM-20-1",
    "duty_setting": 10,
    "f0": 125e6,
    "n_bits": 2000,
    "recovery_cycles": 2000,
    "sweep": {"duty_settings": [0, 10, 40]},
    "expect": {"errors": 0, "locked_up_to": 40, "sweep_identical": True},
}


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def write_scenario(self, doc, name="scenario.json") -> str:
        path = os.path.join(self.tmp, name)
        with open(path, "w") as f:
            if isinstance(doc, str):
                f.write(doc)
            else:
                json.dump(doc, f)
        return path

    def run_cli(self, *argv) -> int:
        with redirect_stdout(io.StringIO()) as out:
            code = cli.main(list(argv) + ["--out", self.tmp], ScenarioWorker(2))
        self.stdout = out.getvalue()
        return code


class TestEfficiencyCommand(CliTestCase):
    def test_table(self):
        self.assertEqual(self.run_cli("efficiency", "--check"), cli.EXIT_OK)
        table = pacsv.read_csv(os.path.join(self.tmp, "efficiency.csv"),
                               convert_options=pacsv.ConvertOptions(
                                   column_types=report_writer.get_efficiency_schema()))
        self.assertEqual(table.column("n").to_pylist(), list(range(3, 21)))
        self.assertAlmostEqual(table.column("e_max").to_pylist()[2], 0.4)
        self.assertEqual(len(self.stdout.strip().splitlines()), 19)

    def test_too_small(self):
        self.assertEqual(self.run_cli("efficiency", "2"), cli.EXIT_INVALID)


class TestVectorsCommand(CliTestCase):
    def test_codebook_file(self):
        self.assertEqual(self.run_cli("vectors", "CDCM-5-2"), cli.EXIT_OK)
        path = os.path.join(self.tmp, "vectors_cdcm_5_2.csv")
        table = pacsv.read_csv(path, convert_options=pacsv.ConvertOptions(
            column_types=report_writer.get_codebook_schema()))
        self.assertEqual(table.column("word").to_pylist(), ["01000", "01100", "01110", "01111"])
        self.assertIn("01110", self.stdout)

    def test_unknown_scheme(self):
        self.assertEqual(self.run_cli("vectors", "NRZ"), cli.EXIT_INVALID)


class TestRoundtripCommand(CliTestCase):
    def test_link_and_sweep(self):
        path = self.write_scenario(SMALL_LINK)
        self.assertEqual(self.run_cli("roundtrip", path, "--check"), cli.EXIT_OK)
        for suffix in (".json", "_phase_error.csv", "_tie_hist.csv"):
            self.assertTrue(os.path.exists(os.path.join(self.tmp, "small_link" + suffix)), suffix)
        with open(os.path.join(self.tmp, "small_link.json")) as f:
            report = json.load(f)
        self.assertEqual(report["ber"]["errors"], 0)
        self.assertEqual([e["duty_setting"] for e in report["sweep"]], [0, 10, 40])
        self.assertTrue(all(e["identical_to_first"] for e in report["sweep"]))
        self.assertTrue(all(c["passed"] for c in report["checks"].values()))
        self.assertIn("lock_limit", report["model_vs_hardware"])

    def test_reports_are_deterministic(self):
        path = self.write_scenario(SMALL_LINK)
        self.run_cli("roundtrip", path)
        with open(os.path.join(self.tmp, "small_link.json"), "rb") as f:
            first = f.read()
        self.run_cli("roundtrip", path)
        with open(os.path.join(self.tmp, "small_link.json"), "rb") as f:
            self.assertEqual(f.read(), first)

    def test_failed_check_exit_status(self):
        doc = dict(SMALL_LINK, sweep={}, expect={"tie_rms_max": -1.0})
        path = self.write_scenario(doc)
        self.assertEqual(self.run_cli("roundtrip", path, "--check"), cli.EXIT_CHECK_FAILED)
        self.assertEqual(self.run_cli("roundtrip", path), cli.EXIT_OK)

    def test_unknown_check_is_invalid(self):
        path = self.write_scenario(dict(SMALL_LINK, expect={"speed": 1}))
        self.assertEqual(self.run_cli("roundtrip", path), cli.EXIT_INVALID)

    def test_empty_file_is_invalid(self):
        path = self.write_scenario("")
        self.assertEqual(self.run_cli("roundtrip", path), cli.EXIT_INVALID)

    def test_missing_file_is_invalid(self):
        self.assertEqual(self.run_cli("roundtrip", os.path.join(self.tmp, "nope.json")), cli.EXIT_INVALID)


class TestBundledScenarios(CliTestCase):
    def test_all_bundled_files_load(self):
        for name in sorted(os.listdir(SCENARIO_DIR)):
            scenario = load_scenario(os.path.join(SCENARIO_DIR, name))
            self.assertTrue(scenario.name, name)

    def test_chain4(self):
        code = self.run_cli("topology", os.path.join(SCENARIO_DIR, "chain4.json"), "--check")
        self.assertEqual(code, cli.EXIT_OK)
        with open(os.path.join(self.tmp, "chain4.json")) as f:
            report = json.load(f)
        self.assertEqual(report["depth"]["rx"], 5)
        self.assertTrue(os.path.exists(os.path.join(self.tmp, "chain4_latency_hist.csv")))

    def test_tree2x2(self):
        code = self.run_cli("topology", os.path.join(SCENARIO_DIR, "tree2x2.json"), "--check")
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(self.tmp, "tree2x2_skew_hist.csv")))

    def test_eye(self):
        code = self.run_cli("eye", os.path.join(SCENARIO_DIR, "eye_cdcm20.json"), "--check")
        self.assertEqual(code, cli.EXIT_OK)
        for suffix in ("_eye.csv", "_eye.png", "_bathtub.csv", ".json"):
            self.assertTrue(os.path.exists(os.path.join(self.tmp, "eye_cdcm20" + suffix)), suffix)

    def test_wrong_command_for_scenario(self):
        code = self.run_cli("roundtrip", os.path.join(SCENARIO_DIR, "tree2x2.json"))
        self.assertEqual(code, cli.EXIT_INVALID)


class TestSettings(CliTestCase):
    def test_save_settings_stores_overrides(self):
        settings_path = os.path.join(self.tmp, "settings.json")
        argv = ["efficiency", "5", "--out", self.tmp, "--seed", "9", "--jobs", "3", "--save-settings"]
        with redirect_stdout(io.StringIO()):
            self.assertEqual(cli.main(argv, ScenarioWorker(2), settings_path=settings_path), cli.EXIT_OK)
        stored = load_settings(settings_path)
        self.assertEqual(stored["output_dir"], self.tmp)
        self.assertEqual(stored["seed"], 9)
        self.assertEqual(stored["max_workers"], 3)

    def test_settings_are_not_written_by_default(self):
        settings_path = os.path.join(self.tmp, "settings.json")
        with redirect_stdout(io.StringIO()):
            cli.main(["efficiency", "5", "--out", self.tmp], ScenarioWorker(2), settings_path=settings_path)
        self.assertFalse(os.path.exists(settings_path))

    def test_settings_seed_is_the_scenario_default(self):
        doc = dict(SMALL_LINK)
        path = self.write_scenario(doc)
        self.assertEqual(load_scenario(path, default_seed=7).seed, 7)
        self.assertEqual(load_scenario(path, default_seed=7).channel.seed, 7)
        path = self.write_scenario(dict(doc, seed=4), "seeded.json")
        self.assertEqual(load_scenario(path, default_seed=7).seed, 4)

    def test_report_carries_settings_seed(self):
        settings_path = os.path.join(self.tmp, "settings.json")
        save_settings({"seed": 11}, settings_path)
        path = self.write_scenario(SMALL_LINK)
        with redirect_stdout(io.StringIO()):
            code = cli.main(["roundtrip", path, "--out", self.tmp], ScenarioWorker(2), settings_path=settings_path)
        self.assertEqual(code, cli.EXIT_OK)
        with open(os.path.join(self.tmp, "small_link.json")) as f:
            self.assertEqual(json.load(f)["seed"], 11)


class TestScenarioLoading(CliTestCase):
    def test_empty_file(self):
        with self.assertRaises(ScenarioError) as ctx:
            load_scenario(self.write_scenario("   \n"))
        self.assertEqual(ctx.exception.line, 1)

    def test_bad_json_reports_line(self):
        with self.assertRaises(ScenarioError) as ctx:
            load_scenario(self.write_scenario('{\n  "name": "x",\n  "scheme": \n}'))
        self.assertEqual(ctx.exception.line, 4)

    def test_field_errors(self):
        with self.assertRaises(ScenarioError) as ctx:
            scenario_from_dict(dict(SMALL_LINK, n_bits=10))
        self.assertEqual(ctx.exception.field, "n_bits")
        with self.assertRaises(ScenarioError) as ctx:
            scenario_from_dict(dict(SMALL_LINK, rx={"sample_phase": "late"}))
        self.assertEqual(ctx.exception.field, "rx.sample_phase")
        with self.assertRaises(ScenarioError) as ctx:
            scenario_from_dict({"scheme": "CDCM-3-1"})
        self.assertEqual(ctx.exception.field, "name")

    def test_receiver_phase_in_degrees(self):
        scenario = scenario_from_dict(dict(SMALL_LINK, rx={"phase_deg": 135}))
        self.assertAlmostEqual(scenario.rx.sample_phase, 0.375)
        self.assertEqual(scenario.rx.pll.phase_offset, 0.5)
        with self.assertRaises(ScenarioError) as ctx:
            scenario_from_dict(dict(SMALL_LINK, pll={"phase_deg": 135}))
        self.assertEqual(ctx.exception.field, "rx.pll.phase_deg")

    def test_kinds_and_seed_override(self):
        scenario = scenario_from_dict(SMALL_LINK)
        self.assertEqual(scenario.kind, ScenarioKind.ROUNDTRIP)
        self.assertEqual(scenario.duty_sweep, (0.0, 10.0, 40.0))
        reseeded = scenario.with_seed(42)
        self.assertEqual(reseeded.seed, 42)
        self.assertEqual(reseeded.channel.seed, 42)

    def test_topology_errors_surface(self):
        doc = {"name": "t", "topology": {"nodes": [{"id": "a", "kind": "fanout"}]}}
        with self.assertRaises(TopologyError):
            scenario_from_dict(doc)


class TestWaveformFiles(CliTestCase):
    def test_export_and_import(self):
        w, _ = transmit(TxSpec(make_general_unary(5, 3), 125e6), 50)
        path = os.path.join(self.tmp, "wave.csv")
        report_writer.export_waveform(w, path)
        self.assertTrue(os.path.exists(os.path.join(self.tmp, "wave.json")))
        self.assertEqual(report_writer.import_waveform(path), w)


class TestScenarioWorker(unittest.TestCase):
    def test_results_keep_job_order(self):
        worker = ScenarioWorker(3)
        results = worker.run([(f"job{k}", lambda k=k: k * k) for k in range(8)])
        self.assertEqual([r.value for r in results], [k * k for k in range(8)])
        self.assertTrue(all(r.ok for r in results))

    def test_library_errors_are_collected(self):
        def broken():
            raise CdcmError("bad")

        results = ScenarioWorker(2).run([("ok", lambda: 1), ("broken", broken)])
        self.assertTrue(results[0].ok)
        self.assertIsInstance(results[1].error, CdcmError)

    def test_stopped_worker_runs_nothing(self):
        worker = ScenarioWorker(2)
        worker.stop()
        results = worker.run([("a", lambda: 1), ("b", lambda: 2)])
        self.assertTrue(all(r.stopped for r in results))
        self.assertFalse(any(r.ok for r in results))


if __name__ == '__main__':
    unittest.main()
