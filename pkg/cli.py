# Command Line
# Scenario runner: efficiency table, conformance vectors, link, topology and eye experiments

import os
import re
import sys
import math
import logging
import argparse
from dataclasses import replace

import numpy as np

from config import LOG_LEVEL, FS_PER_SECOND, HARDWARE_REFERENCE, SETTINGS_PATH, load_settings, save_settings
from codec import efficiency_table, parse_scheme
from waveform import inject_jitter, measure, eye_histogram, bathtub
from pll import pll_run
from netlink import transmit, ber_test
from topology import NodeKind, run_topology
from scenario import Scenario, ScenarioKind, load_scenario
from scenario_worker import ScenarioWorker
from exceptions import CdcmError, InvalidParameter, ScenarioError, PllError
import report_writer

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CHECK_FAILED = 2

PS = 1e-12
NS = 1e-9


def slug(name: str) -> str:
    """File-name stem for a scenario or scheme name."""
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_") or "scenario"


class CheckList:
    """Acceptance checks of one run, keyed by the scenario's expect entries."""

    def __init__(self, expect: dict, known: tuple[str, ...]):
        unknown = sorted(set(expect) - set(known))
        if unknown:
            raise ScenarioError(f"unknown check '{unknown[0]}'", field=f"expect.{unknown[0]}")
        self.expect = expect
        self.results = {}

    def __contains__(self, name: str) -> bool:
        return name in self.expect

    def record(self, name: str, model, passed: bool):
        self.results[name] = {"expected": self.expect[name], "model": model, "passed": bool(passed)}
        level = logging.INFO if passed else logging.WARNING
        logger.log(level, f"check {name}: {'pass' if passed else 'FAIL'} (model {model}, expected {self.expect[name]})")

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.results.values())


def _hardware(model, hardware, unit: str, note: str) -> dict:
    return {"model": model, "hardware": hardware, "unit": unit, "note": note}


def cmd_efficiency(n_max: int, out_dir: str) -> tuple[list, CheckList]:
    if n_max < 3:
        raise InvalidParameter(f"n_max must be >= 3, got {n_max}")
    rows = efficiency_table(n_max)
    sys.stdout.write(report_writer.csv_text(report_writer.efficiency_columns(rows),
                                            report_writer.get_efficiency_schema()))
    report_writer.write_efficiency(rows, os.path.join(out_dir, "efficiency.csv"))

    checks = CheckList({"e_max_3": 1 / 3, "e_max_5": 0.4, "unique_max_n": 5}, ("e_max_3", "e_max_5", "unique_max_n"))
    table = {n: e for n, _, e in rows}
    checks.record("e_max_3", table[3], abs(table[3] - 1 / 3) <= 1e-12)
    if n_max >= 5:
        checks.record("e_max_5", table[5], abs(table[5] - 0.4) <= 1e-12)
        best = max(table.values())
        winners = [n for n, e in table.items() if abs(e - best) <= 1e-12]
        checks.record("unique_max_n", winners, winners == [5])
    return rows, checks


def cmd_vectors(scheme_name: str, out_dir: str) -> str:
    scheme = parse_scheme(scheme_name)
    path = os.path.join(out_dir, f"vectors_{slug(scheme.name)}.csv")
    report_writer.write_codebook(scheme, path)
    sys.stdout.write(report_writer.csv_text(report_writer.codebook_columns(scheme), report_writer.get_codebook_schema()))
    return path


def _sweep(scenario: Scenario, checks: CheckList) -> list[dict]:
    """Recover the clock at every duty setting and compare with the first setting."""
    entries = []
    reference = None
    for pct in scenario.duty_sweep:
        tx = replace(scenario.tx, duty_setting=pct)
        w, _ = transmit(tx, scenario.recovery_cycles)
        entry = {"duty_setting": pct, "scheme": tx.line_scheme.name,
                 "hardware": "no lock" if pct >= HARDWARE_REFERENCE["no_lock_percent"] else "lock"}
        try:
            output, state = pll_run(w, replace(scenario.rx.pll, multiplier=1, phase_offset=0.0))
        except PllError as e:
            logger.warning(f"sweep ±{pct:g}%: {e}")
            entry.update(locked=False, lock_index=None, identical_to_first=False)
            entries.append(entry)
            continue
        clock = output.clock
        if reference is None:
            reference = (state.feedback_edges, clock)
        identical = np.array_equal(state.feedback_edges, reference[0]) and clock == reference[1]
        entry.update(locked=state.locked, lock_index=state.lock_index, identical_to_first=bool(identical))
        entries.append(entry)
        logger.info(f"sweep ±{pct:g}%: locked at update {state.lock_index}, identical={identical}")

    if "locked_up_to" in checks:
        limit = checks.expect["locked_up_to"]
        locked = [e["duty_setting"] for e in entries if e["locked"]]
        checks.record("locked_up_to", max(locked) if locked else None,
                      all(e["locked"] for e in entries if e["duty_setting"] <= limit))
    if "sweep_identical" in checks:
        identical = all(e["identical_to_first"] for e in entries)
        checks.record("sweep_identical", identical, identical == bool(checks.expect["sweep_identical"]))
    return entries


def cmd_roundtrip(scenario: Scenario, out_dir: str) -> tuple[dict, CheckList]:
    """BER test, clock recovery metrics and the optional duty-setting sweep."""
    if scenario.kind == ScenarioKind.TOPOLOGY:
        raise ScenarioError(f"'{scenario.name}' is a topology scenario", field="kind")
    checks = CheckList(scenario.expect, ("ber", "errors", "locked_up_to", "sweep_identical", "tie_rms_max"))
    stem = os.path.join(out_dir, slug(scenario.name))
    tx, rx = scenario.tx, scenario.rx

    result = ber_test(tx, rx, scenario.channel, scenario.n_bits)
    if "ber" in checks:
        checks.record("ber", result.ber, result.ber <= checks.expect["ber"])
    if "errors" in checks:
        checks.record("errors", result.errors, result.errors <= checks.expect["errors"])

    w, _ = transmit(tx, scenario.recovery_cycles)
    w = inject_jitter(w, scenario.channel)
    output, state = pll_run(w, replace(rx.pll, multiplier=1, phase_offset=0.0))
    timing = measure(output.clock, tx.f0)
    report_writer.write_phase_error(state, f"{stem}_phase_error.csv")
    report_writer.write_histogram(timing.tie, f"{stem}_tie_hist.csv")
    if "tie_rms_max" in checks:
        checks.record("tie_rms_max", timing.tie_rms, timing.tie_rms <= checks.expect["tie_rms_max"])

    sweep = _sweep(scenario, checks) if scenario.duty_sweep else []
    hardware = {
        "ber_bound": _hardware(result.bound, HARDWARE_REFERENCE["ber_upper_bound"], "",
                               f"zero-error bound after {result.bits} simulated bits"),
        "recovered_rj": _hardware(timing.rj_rms, HARDWARE_REFERENCE["recovered_rj_ps"] * PS, "s",
                                  "behavioral PLL, channel jitter only"),
        "recovered_dj": _hardware(timing.ddj_pp, HARDWARE_REFERENCE["recovered_dj_ps"] * PS, "s",
                                  "behavioral PLL, channel jitter only"),
    }
    if sweep:
        locked = [e["duty_setting"] for e in sweep if e["locked"]]
        hardware["lock_limit"] = _hardware(max(locked) if locked else None, HARDWARE_REFERENCE["lock_limit_percent"],
                                           "%", "largest duty setting with a locked PLL")
        high = [e for e in sweep if e["duty_setting"] >= HARDWARE_REFERENCE["no_lock_percent"]]
        if high:
            hardware["no_lock_point"] = _hardware(
                {f"{e['duty_setting']:g}": "lock" if e["locked"] else "no lock" for e in high},
                "no lock", "%", f"hardware failed to lock at ±{HARDWARE_REFERENCE['no_lock_percent']}%; "
                                "the model only sees rising edges")

    report = {
        "scenario": scenario.name,
        "kind": scenario.kind.value,
        "seed": scenario.seed,
        "scheme": tx.line_scheme.name,
        "f0_hz": tx.f0,
        "ber": {"ber": result.ber, "errors": result.errors, "bits": result.bits, "bound": result.bound},
        "recovery": {"cycles": scenario.recovery_cycles, "locked": state.locked, "lock_index": state.lock_index,
                     "timing": timing.summary()},
        "sweep": sweep,
        "model_vs_hardware": hardware,
        "checks": checks.results,
    }
    report_writer.write_json(report, f"{stem}.json")
    return report, checks


def _independent_hops(scenario: Scenario, leaves: list[str]) -> int:
    """Fanout stages (output ports) that two leaves do not share."""
    t = scenario.topology
    a, b = t.path(leaves[0]), t.path(leaves[1])
    common = 0
    while common < min(len(a), len(b)) and a[common] == b[common]:
        common += 1
    def fanouts(path):
        return sum(1 for n in path if t.nodes[n].kind == NodeKind.FANOUT)

    # the last shared node drives the two branches from different output ports
    split = [a[common - 1]] if t.nodes[a[common - 1]].kind == NodeKind.FANOUT else []
    return fanouts(a[common:]) + fanouts(b[common:]) + 2 * len(split)


def cmd_topology(scenario: Scenario, out_dir: str) -> tuple[dict, CheckList]:
    """Run a topology scenario; per-hop jitter, latency and leaf skew."""
    if scenario.kind != ScenarioKind.TOPOLOGY:
        raise ScenarioError(f"'{scenario.name}' is not a topology scenario", field="kind")
    checks = CheckList(scenario.expect, ("latency_constant", "latency_nominal", "leaf_skew_max", "diff_jitter",
                                         "tie_non_increasing", "errors"))
    stem = os.path.join(out_dir, slug(scenario.name))
    t = scenario.topology
    metrics = run_topology(t, scenario.n_cycles, scenario.seed, scenario.runs)
    observations = metrics.observations
    primary = t.leaves[0] if t.leaves else (t.observe[-1] if t.observe else None)

    if primary is not None:
        obs = observations[primary]
        report_writer.write_histogram(obs.latency_samples, f"{stem}_latency_hist.csv")
        if obs.timing is not None:
            report_writer.write_histogram(obs.timing.tie, f"{stem}_tie_hist.csv")
    if metrics.leaf_skew.size:
        report_writer.write_histogram(metrics.leaf_skew, f"{stem}_skew_hist.csv")

    tick = t.root.spec.resolution_fs / FS_PER_SECOND
    if "latency_constant" in checks:
        spread = max(max(o.latency_per_run) - min(o.latency_per_run) for o in observations.values())
        checks.record("latency_constant", spread, spread <= 0.5 * tick)
    if "latency_nominal" in checks:
        worst = max(abs(o.latency_mean - o.nominal_latency) for o in observations.values())
        checks.record("latency_nominal", worst, worst <= 0.5 * tick)
    if "leaf_skew_max" in checks:
        skew = float(np.abs(metrics.leaf_skew).max()) if metrics.leaf_skew.size else None
        checks.record("leaf_skew_max", skew, skew is not None and skew <= checks.expect["leaf_skew_max"])
    if "diff_jitter" in checks:
        spec = checks.expect["diff_jitter"]
        if not isinstance(spec, dict) or "per_hop_sigma" not in spec:
            raise ScenarioError("diff_jitter needs per_hop_sigma", field="expect.diff_jitter")
        if len(t.leaves) < 2:
            raise ScenarioError("diff_jitter needs two leaves", field="topology.leaves")
        hops = _independent_hops(scenario, t.leaves)
        oracle = float(spec["per_hop_sigma"]) * math.sqrt(hops)
        measured = metrics.leaf_skew_std
        checks.record("diff_jitter", {"measured": measured, "oracle": oracle, "independent_hops": hops},
                      measured is not None and abs(measured - oracle) <= float(spec.get("tolerance", 0.2)) * oracle)
    if "tie_non_increasing" in checks:
        slack = checks.expect["tie_non_increasing"]
        slack = 0.0 if isinstance(slack, bool) else float(slack)
        ties = [observations[n].timing.tie_rms for n in t.order
                if n in observations and t.nodes[n].kind == NodeKind.FANOUT and observations[n].timing is not None]
        checks.record("tie_non_increasing", ties,
                      all(b <= a * (1 + slack) for a, b in zip(ties, ties[1:])))
    if "errors" in checks:
        errors = sum(o.errors for o in observations.values())
        checks.record("errors", errors, errors <= checks.expect["errors"])

    hardware = {}
    if metrics.leaf_skew.size:
        hardware["leaf_skew_rms"] = _hardware(metrics.leaf_skew_rms, HARDWARE_REFERENCE["leaf_skew_rms_ps"] * PS, "s",
                                              "configured flip-flop jitter only")
    if primary is not None and observations[primary].latency_per_run:
        runs = observations[primary].latency_per_run
        hardware["latency_spread"] = _hardware(max(runs) - min(runs), HARDWARE_REFERENCE["latency_spread_ps"] * PS,
                                               "s", f"spread of mean latency over {len(runs)} re-initialisations")
    hops = [n for n in t.order if n in observations and t.nodes[n].kind == NodeKind.FANOUT]
    if hops and observations[hops[-1]].timing is not None:
        hardware["last_hop_rj"] = _hardware(observations[hops[-1]].timing.rj_rms,
                                            HARDWARE_REFERENCE["chain_hop4_rj_ps"] * PS, "s",
                                            f"random jitter after {len(hops)} fanout stages")

    report = {
        "scenario": scenario.name,
        "kind": scenario.kind.value,
        "seed": scenario.seed,
        "n_cycles": scenario.n_cycles,
        "runs": scenario.runs,
        "depth": {n: len(t.path(n)) - 1 for n in observations},
        "metrics": metrics.to_dict(),
        "model_vs_hardware": hardware,
        "checks": checks.results,
    }
    report_writer.write_json(report, f"{stem}.json")
    return report, checks


def cmd_eye(scenario: Scenario, out_dir: str) -> tuple[dict, CheckList]:
    """Folded eye histogram of the transmitted stream after the channel."""
    if scenario.kind == ScenarioKind.TOPOLOGY:
        raise ScenarioError(f"'{scenario.name}' is a topology scenario", field="kind")
    checks = CheckList(scenario.expect, ("eye_opening_min",))
    stem = os.path.join(out_dir, slug(scenario.name))
    w, _ = transmit(scenario.tx, scenario.eye_cycles)
    w = inject_jitter(w, scenario.channel)
    hist = eye_histogram(w, scenario.tx.f0, scenario.eye_bins, scenario.eye_offset)
    report_writer.write_eye_csv(hist, f"{stem}_eye.csv")
    report_writer.write_eye_png(hist, f"{stem}_eye.png")
    if scenario.channel.random_sigma > 0:
        phases, ber = bathtub(hist, scenario.channel.random_sigma)
        report_writer.write_bathtub(phases, ber, f"{stem}_bathtub.csv")
    if "eye_opening_min" in checks:
        checks.record("eye_opening_min", hist.opening, hist.opening >= checks.expect["eye_opening_min"])

    report = {
        "scenario": scenario.name,
        "kind": scenario.kind.value,
        "seed": scenario.seed,
        "scheme": scenario.tx.line_scheme.name,
        "cycles": hist.cycles,
        "bins": hist.bins,
        "eye_opening_s": hist.opening,
        "transition_loci": int(hist.loci.size),
        "model_vs_hardware": {
            "eye_opening": _hardware(hist.opening, HARDWARE_REFERENCE["eye_opening_ns"] * NS, "s",
                                     "configured channel jitter only"),
        },
        "checks": checks.results,
    }
    report_writer.write_json(report, f"{stem}.json")
    return report, checks


COMMANDS = {"roundtrip": cmd_roundtrip, "topology": cmd_topology, "eye": cmd_eye}


def build_parser() -> argparse.ArgumentParser:
    # options are accepted before or after the command name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the scenario seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="report directory")
    common.add_argument("--resolution-fs", type=int, default=argparse.SUPPRESS, help="femtoseconds per tick")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="scenario files run concurrently")
    common.add_argument("--check", action="store_true", default=argparse.SUPPRESS,
                        help="exit with status 2 when an acceptance check fails")
    common.add_argument("--save-settings", action="store_true", default=argparse.SUPPRESS,
                        help="store --out, --jobs, --resolution-fs and --seed as the new defaults")

    parser = argparse.ArgumentParser(prog="cdcm", description="CDCM link simulator", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("efficiency", parents=[common], help="maximum efficiency per serializer width")
    p.add_argument("n_max", nargs="?", type=int, default=20)
    p = sub.add_parser("vectors", parents=[common], help="export the codebook of a scheme")
    p.add_argument("scheme")
    for name, help_text in (("roundtrip", "BER test and clock recovery"), ("topology", "chain and tree runs")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("files", nargs="+")
    p = sub.add_parser("eye", parents=[common], help="eye histogram and bathtub curve")
    p.add_argument("files", nargs=1)
    return parser


def _run_scenarios(command: str, files: list[str], out_dir: str, seed: int | None, resolution_fs: int,
                   worker: ScenarioWorker, default_seed: int = 1) -> tuple[bool, bool]:
    """Run one job per scenario file; returns (all valid, all checks passed)."""
    runner = COMMANDS[command]

    def job(path):
        def run():
            scenario = load_scenario(path, resolution_fs, default_seed)
            if seed is not None:
                scenario = scenario.with_seed(seed)
            _, checks = runner(scenario, out_dir)
            return checks
        return run

    results = worker.run([(path, job(path)) for path in files])
    valid = all(r.ok for r in results)
    passed = all(r.value.passed for r in results if r.ok)
    for r in results:
        if r.stopped:
            logger.warning(f"{r.name}: not run (stopped)")
    return valid, passed


def main(argv: list[str] | None = None, worker: ScenarioWorker | None = None,
         settings_path: str = SETTINGS_PATH) -> int:
    settings = load_settings(settings_path)
    try:
        logging.getLogger().setLevel(str(settings["log_level"]).upper())
    except ValueError:
        logger.warning(f"unknown log level {settings['log_level']}; keeping {logging.getLevelName(LOG_LEVEL)}")

    args = build_parser().parse_args(argv)
    out_dir = getattr(args, "out", settings["output_dir"])
    seed = getattr(args, "seed", None)
    resolution_fs = getattr(args, "resolution_fs", settings["resolution_fs"])
    check = getattr(args, "check", False)
    if worker is None:
        worker = ScenarioWorker(getattr(args, "jobs", settings["max_workers"]))
    elif hasattr(args, "jobs"):
        worker.max_workers = max(1, args.jobs)
    if getattr(args, "save_settings", False):
        updated = dict(settings, output_dir=out_dir, resolution_fs=resolution_fs,
                       max_workers=getattr(args, "jobs", settings["max_workers"]))
        if seed is not None:
            updated["seed"] = seed
        try:
            save_settings(updated, settings_path)
            logger.info(f"settings saved to {settings_path}")
        except OSError as e:
            logger.warning(f"Error saving settings to {settings_path}: {e}")

    try:
        os.makedirs(out_dir, exist_ok=True)
        if args.command == "efficiency":
            _, checks = cmd_efficiency(args.n_max, out_dir)
            valid, passed = True, checks.passed
        elif args.command == "vectors":
            cmd_vectors(args.scheme, out_dir)
            valid, passed = True, True
        else:
            valid, passed = _run_scenarios(args.command, args.files, out_dir, seed, resolution_fs, worker,
                                           settings["seed"])
    except (CdcmError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_INVALID

    if not valid:
        return EXIT_INVALID
    if check and not passed:
        logger.error(f"{args.command}: acceptance checks failed")
        return EXIT_CHECK_FAILED
    return EXIT_OK
