"""Experiment runner: executes a configured scenario matrix, computes
descriptive statistics, and writes plot-ready CSV/JSON bundles.

Outputs are deliberately timestamp-free and built from sorted keys, so a
given configuration + seed reproduces byte-identical files; that, not
wall-clock speed, is the contract the parallel mode must keep.  Work is
split into iteration ranges, and because every iteration reseeds from
(master seed, iteration index), any split yields the same records.
"""

import concurrent.futures
import hashlib
import io
import json
import math
import os
import statistics

from . import __version__
from .hypervisor import run_scenario


def run_chunk(defn, start, stop):
    """Module-level so process pools can pickle it."""
    return run_scenario(defn, start, stop)


def run_experiment(config, workers=1, log=None):
    """Run every selected scenario; returns {name: [IterationRecord]}.

    workers > 1 distributes iteration ranges over processes; results are
    identical to a serial run by the per-iteration seeding contract.
    """
    results = {}
    for name in config.scenario_names:
        defn = config.scenarios[name]
        if log:
            log("scenario %-24s %6d iterations ..." % (name, defn.iterations))
        if workers <= 1 or defn.iterations < 2 * workers:
            results[name] = run_scenario(defn)
            continue
        chunk = max(1, math.ceil(defn.iterations / (workers * 4)))
        bounds = [
            (start, min(start + chunk, defn.iterations))
            for start in range(0, defn.iterations, chunk)
        ]
        records = []
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(run_chunk, *zip(*((defn, s, e) for s, e in bounds))):
                records.extend(part)
        results[name] = records
    return results


# -- statistics -------------------------------------------------------------------


def summarize(records):
    """Descriptive statistics of one scenario's records.

    The spread figure is the population standard deviation (N divisor,
    statistics.pstdev): the iterations are the whole population of the
    deterministic experiment, not a sample from a larger one.
    """
    cycles = [r.cycles for r in records]
    out = {"iterations": len(records)}
    if not records:
        return out
    if len(cycles) >= 2:
        q1, median, q3 = statistics.quantiles(cycles, n=4, method="inclusive")
    else:
        q1 = median = q3 = float(cycles[0])
    out["cycles"] = {
        "mean": round(statistics.fmean(cycles), 6),
        "std": round(statistics.pstdev(cycles), 6),
        "min": min(cycles),
        "q1": round(q1, 6),
        "median": round(median, 6),
        "q3": round(q3, 6),
        "max": max(cycles),
    }
    out["tlb_misses"] = {
        "mean": round(statistics.fmean(r.tlb_misses for r in records), 6),
        "total": sum(r.tlb_misses for r in records),
    }
    out["cache_misses"] = {
        "mean": round(statistics.fmean(r.cache_misses for r in records), 6),
        "total": sum(r.cache_misses for r in records),
    }
    return out


def _pct_delta(baseline, subject):
    if baseline == 0:
        return "undefined"
    return round((subject - baseline) / baseline * 100.0, 3)


def compare(bundle, baseline_name, subject_name):
    """Δmean% / Δstd% of measured cycles between two scenarios of a
    summary bundle (percentages relative to the baseline; a zero
    baseline reads 'undefined' rather than infinity)."""
    scenarios = bundle["scenarios"]
    for name in (baseline_name, subject_name):
        if name not in scenarios:
            raise KeyError(
                "scenario %r not in bundle (has: %s)" % (name, ", ".join(sorted(scenarios)))
            )
        if "cycles" not in scenarios[name]:
            raise ValueError("scenario %r has no iterations to compare" % name)
    base = scenarios[baseline_name]["cycles"]
    subj = scenarios[subject_name]["cycles"]
    return {
        "baseline": baseline_name,
        "subject": subject_name,
        "delta_mean_pct": _pct_delta(base["mean"], subj["mean"]),
        "delta_std_pct": _pct_delta(base["std"], subj["std"]),
    }


# -- output bundle -----------------------------------------------------------------


def build_bundle(config, results):
    """The JSON-ready summary: stats per scenario plus pairwise deltas
    against the isolation and unmitigated scenarios when present."""
    scenarios = {}
    for name in config.scenario_names:
        defn = config.scenarios[name]
        entry = summarize(results[name])
        entry["seed"] = defn.seed
        scenarios[name] = entry
    bundle = {
        "experiment": config.name,
        "simulator_version": __version__,
        "config_sha256": hashlib.sha256(config.text.encode()).hexdigest(),
        "seed": config.seed,
        "stats_note": (
            "std is the population standard deviation (N divisor) of "
            "measured-phase cycles"
        ),
        "scenarios": scenarios,
    }
    for baseline in ("isolation", "unmitigated"):
        if baseline not in scenarios or "cycles" not in scenarios[baseline]:
            continue
        for name, entry in scenarios.items():
            if name == baseline or "cycles" not in entry:
                continue
            entry["vs_%s" % baseline] = {
                "delta_mean_pct": _pct_delta(
                    scenarios[baseline]["cycles"]["mean"], entry["cycles"]["mean"]
                ),
                "delta_std_pct": _pct_delta(
                    scenarios[baseline]["cycles"]["std"], entry["cycles"]["std"]
                ),
            }
    return bundle


def render_csv(records):
    out = io.StringIO()
    out.write("iteration,cycles,tlb_misses,cache_misses\n")
    for r in records:
        out.write("%d,%d,%d,%d\n" % (r.index, r.cycles, r.tlb_misses, r.cache_misses))
    return out.getvalue()


def render_json(bundle):
    return json.dumps(bundle, indent=2, sort_keys=True) + "\n"


def write_outputs(outdir, config, results):
    """Write per-scenario CSVs and the summary JSON; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for name in config.scenario_names:
        path = os.path.join(outdir, "%s-%s.csv" % (config.name, name))
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(render_csv(results[name]))
        paths.append(path)
    summary_path = os.path.join(outdir, "%s-summary.json" % config.name)
    with open(summary_path, "w", encoding="utf-8", newline="") as handle:
        handle.write(render_json(build_bundle(config, results)))
    paths.append(summary_path)
    return paths
