"""Monte-Carlo experiment driver and artifact writers.

Each run regenerates the historian archive, identifies and labels the
archived controllers, and searches for the minimal retuning that flips
the baseline's pass/fail label. Runs use seeds derived from the master
seed (seed_i = master + i) so any subset can be reproduced in isolation.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .control import ControllerTheta, simulate_closed_loop
from .ident import generate_historian, identify_controller, label_controllers
from .plant import DiscreteTf, linearized_pressure_tf, servo_tf, tustin_discretize
from .search import (CostSpec, CounterfactualResult, find_counterfactual)

SUMMARY_SCHEMA = "looptune-summary-v1"
SHIFTS_SCHEMA = "looptune-shifts-v1"

SUMMARY_COLS_SINGLE = ["instance", "validity", "lof", "iters",
                       "d_kp", "d_ki", "d_kd", "d_tf"]
SUMMARY_COLS_CASCADE = SUMMARY_COLS_SINGLE + ["d_kp2", "d_ki2", "d_kd2", "d_tf2"]

DELTA_COLS_SINGLE = ["d_kp", "d_ki", "d_kd", "d_tf"]
DELTA_COLS_CASCADE = DELTA_COLS_SINGLE + ["d_kp2", "d_ki2", "d_kd2", "d_tf2"]


class RunnerError(Exception):
    """Raised when an experiment run cannot proceed (degenerate archive etc.)."""


@dataclass
class RunRecord:
    """Outcome of one seeded end-to-end run."""

    run: int
    seed: int
    result: CounterfactualResult
    n_hist_pass: int


@dataclass
class RunSummary:
    """Across-run aggregates, one row of the summary table."""

    instance: str
    validity: float
    lof: float
    iters: float
    delta: np.ndarray   # mean signed shift of the reported retunings

    def __post_init__(self):
        if not (0.0 <= self.validity <= 1.0):
            raise ValueError("validity must lie in [0, 1]")


def build_plants(exp: ExperimentConfig) -> tuple[DiscreteTf, DiscreteTf]:
    """Discretize the pressure and servo transfer functions of the loop."""
    g1 = tustin_discretize(linearized_pressure_tf(exp.plant), exp.sim.T_s)
    g2 = tustin_discretize(servo_tf(exp.plant), exp.sim.T_s)
    return g1, g2


def _cost_spec(exp: ExperimentConfig, dataset) -> CostSpec:
    spec = CostSpec.from_dataset(
        exp.theta0.as_vector(), dataset,
        beta=exp.beta, lof_k=exp.lof_k, lof_threshold=exp.lof_threshold,
    )
    if exp.distance_weights == "scale":
        # weighting by the per-dim scale turns the standardized L1 into a
        # raw-unit L1, favouring small absolute gain moves
        spec = replace(spec, weights_d=spec.scale.copy(), weights_g=spec.scale.copy())
    return spec


def run_single(exp: ExperimentConfig, run_idx: int) -> RunRecord:
    """One full generate -> identify -> label -> search run."""
    seed_i = exp.master_seed + run_idx
    sub = np.random.SeedSequence(seed_i).generate_state(4)
    g1, g2 = build_plants(exp)

    batches, _ = generate_historian(
        g1, g2, exp.sim, exp.nominal, exp.n_hist, seed=int(sub[0]),
        spread=exp.hist_spread, n_samples=exp.hist_samples,
    )
    thetas = [identify_controller(b, cascade=exp.cascade, seed=int(sub[1]) + b.batch_id)
              for b in batches]
    dataset = label_controllers(thetas, g1, g2, exp.sim, exp.tau, seed=int(sub[2]))
    if not dataset.has_both_classes():
        raise RunnerError(
            f"degenerate archive in run {run_idx}: all {len(dataset.labels)} "
            "historical controllers carry the same label"
        )
    spec = _cost_spec(exp, dataset)
    result = find_counterfactual(
        g1, g2, exp.sim, exp.theta0, dataset, spec, exp.schedule, exp.tau,
        seed=int(sub[3]), budget=exp.budget, n_starts=exp.n_starts,
        n_mc=exp.n_mc, max_extra_iters=exp.max_extra_iters,
    )
    return RunRecord(run=run_idx, seed=seed_i, result=result,
                     n_hist_pass=int(dataset.labels.sum()))


def run_experiment(exp: ExperimentConfig) -> list[RunRecord]:
    """All Monte-Carlo runs, optionally on a worker pool, ordered by index."""
    if exp.n_workers == 1 or exp.n_runs == 1:
        return [run_single(exp, i) for i in range(exp.n_runs)]
    import os
    workers = exp.n_workers if exp.n_workers > 0 else (os.cpu_count() or 1)
    workers = min(workers, exp.n_runs)
    if workers <= 1:
        return [run_single(exp, i) for i in range(exp.n_runs)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {i: pool.submit(run_single, exp, i) for i in range(exp.n_runs)}
        records = [futures[i].result() for i in range(exp.n_runs)]
    return records


def aggregate(exp: ExperimentConfig, records: list[RunRecord]) -> RunSummary:
    """Across-run means; shift components averaged over valid runs only."""
    validity = float(np.mean([r.result.validity for r in records]))
    iters = float(np.mean([r.result.n_tests for r in records]))
    valid = [r for r in records if r.result.validity == 1]
    if valid:
        lof = float(np.mean([r.result.lof_cfe for r in valid]))
        delta = np.mean([r.result.delta for r in valid], axis=0)
    else:
        lof = float("nan")
        delta = np.full(exp.theta0.dim, np.nan)
    return RunSummary(instance=exp.instance, validity=validity, lof=lof,
                      iters=iters, delta=delta)


# ---------------------------------------------------------------------------
# artifact writers; all numbers use repr() so output is byte-deterministic
# and round-trips to the exact float


def _fmt(x: float) -> str:
    return repr(float(x))


def write_summary_csv(path: Path, exp: ExperimentConfig, summary: RunSummary) -> None:
    cols = SUMMARY_COLS_CASCADE if exp.cascade else SUMMARY_COLS_SINGLE
    lines = [f"# {SUMMARY_SCHEMA}", ",".join(cols)]
    row = [summary.instance, _fmt(summary.validity), _fmt(summary.lof),
           _fmt(summary.iters)] + [_fmt(d) for d in summary.delta]
    lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def write_trace_json(path: Path, exp: ExperimentConfig, records: list[RunRecord]) -> None:
    runs = []
    for rec in records:
        res = rec.result
        runs.append({
            "run": rec.run,
            "seed": rec.seed,
            "validity": res.validity,
            "n_tests": res.n_tests,
            "lof_cfe": None if np.isnan(res.lof_cfe) else res.lof_cfe,
            "budget_exhausted": res.budget_exhausted,
            "n_hist_pass": rec.n_hist_pass,
            "theta0": list(res.theta0),
            "theta_cfe": None if res.theta_cfe is None else list(res.theta_cfe),
            "delta": None if res.delta is None else list(res.delta),
            "candidates": [
                {"theta": list(c.theta), "label": c.label, "cost": c.cost,
                 "lof": c.lof, "ei": c.ei, "kind": c.kind}
                for c in res.trace
            ],
        })
    payload = {"instance": exp.instance, "case": exp.case,
               "master_seed": exp.master_seed, "runs": runs}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def write_shift_csv(path: Path, exp: ExperimentConfig, records: list[RunRecord]) -> None:
    """Per-candidate shifts relative to theta0, the box-plot raw data."""
    cols = DELTA_COLS_CASCADE if exp.cascade else DELTA_COLS_SINGLE
    lines = [f"# {SHIFTS_SCHEMA}", ",".join(["run", "kind", "label"] + cols)]
    theta0 = exp.theta0.as_vector()
    for rec in records:
        for c in rec.result.trace:
            d = c.theta - theta0
            lines.append(",".join([str(rec.run), c.kind, str(c.label)]
                                  + [_fmt(x) for x in d]))
    path.write_text("\n".join(lines) + "\n")


def write_step_csv(path: Path, trace) -> None:
    lines = ["t,r1,u1,u2,y1,y2"]
    for k in range(len(trace.t)):
        lines.append(",".join(_fmt(v) for v in
                              (trace.t[k], trace.r1[k], trace.u1[k],
                               trace.u2[k], trace.y1[k], trace.y2[k])))
    path.write_text("\n".join(lines) + "\n")


def representative_cfe(records: list[RunRecord]) -> Optional[np.ndarray]:
    """CFE of the first valid run, the designated one for step traces."""
    for rec in records:
        if rec.result.validity == 1:
            return rec.result.theta_cfe
    return None


def write_artifacts(exp: ExperimentConfig, records: list[RunRecord]) -> RunSummary:
    """Write all run artifacts into the configured output directory."""
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = aggregate(exp, records)
    write_summary_csv(out / "summary.csv", exp, summary)
    write_trace_json(out / "runs.json", exp, records)
    write_shift_csv(out / "candidate_shifts.csv", exp, records)

    # noise-free before/after step traces for the designated run
    g1, g2 = build_plants(exp)
    cfg_nf = replace(exp.sim, noise_free=True, seed=0)
    write_step_csv(out / "step_theta0.csv",
                   simulate_closed_loop(g1, g2, exp.theta0, cfg_nf))
    cfe = representative_cfe(records)
    if cfe is not None:
        write_step_csv(out / "step_cfe.csv",
                       simulate_closed_loop(g1, g2, ControllerTheta.from_vector(cfe), cfg_nf))
    return summary


def write_historian_archive(exp: ExperimentConfig) -> Path:
    """Archive-only generation: batch CSVs plus a manifest."""
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    g1, g2 = build_plants(exp)
    sub = np.random.SeedSequence(exp.master_seed).generate_state(4)
    batches, truths = generate_historian(
        g1, g2, exp.sim, exp.nominal, exp.n_hist, seed=int(sub[0]),
        spread=exp.hist_spread, n_samples=exp.hist_samples,
    )
    names = []
    for b in batches:
        name = f"batch_{b.batch_id:03d}.csv"
        lines = ["k,r1,u1,u2,y1,y2"]
        for k in range(len(b.r1)):
            lines.append(",".join([str(k)] + [_fmt(v) for v in
                                              (b.r1[k], b.u1[k], b.u2[k],
                                               b.y1[k], b.y2[k])]))
        (out / name).write_text("\n".join(lines) + "\n")
        names.append(name)
    manifest = {
        "case": exp.case,
        "master_seed": exp.master_seed,
        "n_batches": len(batches),
        "n_samples": exp.hist_samples,
        "T_s": exp.sim.T_s,
        "batches": names,
        "ground_truth": [list(t.as_vector()) for t in truths],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def run_step_test(exp: ExperimentConfig, theta: ControllerTheta,
                  noise_free: Optional[bool] = None, seed: int = 0):
    """One labeled step test; returns (label, metrics, trace)."""
    from .ident import label_step_test
    g1, g2 = build_plants(exp)
    cfg = exp.sim
    if noise_free is not None:
        cfg = replace(cfg, noise_free=noise_free)
    cfg = replace(cfg, seed=seed)
    return label_step_test(g1, g2, theta, cfg, exp.tau)
