"""Command-line interface: data generation, training, auditing, baselines,
the benchmark table, and the two exact counterexample checks.

Exit codes: 0 on success, 2 when a result violates its acceptance threshold,
3 on convergence failures.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from .audit import audit_family, parity_counterexample, sim_counterexample
from .bench import (
    BENCH_COLUMNS,
    CenterPlacementError,
    MixtureConfig,
    aggregate_results,
    fit_linear_baseline,
    gen_gaussian_mixture,
    run_benchmark,
)
from .calibration import ece as ece_fn
from .core import (
    ExpectationEngine,
    FunctionPredictor,
    HypothesisClass,
    coordinate_class,
    load_dataset,
    load_distribution,
    save_dataset,
)
from .losses import get_loss
from .multiaccuracy import ExhaustiveWeakLearner, NonConvergenceError, mae as mae_fn
from .training import CalmaConfig, calma

EXIT_THRESHOLD = 2
EXIT_CONVERGENCE = 3


def _build_class(spec: str, X: np.ndarray) -> tuple[HypothesisClass, dict]:
    """Resolve a --class spec against data; 'coords' scales each coordinate
    by its max absolute value so members are bounded by 1."""
    if spec == "coords":
        scales = [max(float(np.max(np.abs(X[:, j]))), 1e-12) for j in range(X.shape[1])]
        return coordinate_class(X.shape[1], scales), {"kind": "coords", "scales": scales}
    if spec.startswith("coords:"):
        scales = [float(v) for v in spec.split(":", 1)[1].split(",")]
        return coordinate_class(len(scales), scales), {"kind": "coords", "scales": scales}
    raise click.UsageError(f"unknown class spec {spec!r}; use 'coords' or 'coords:s0,s1,...'")


def _class_from_dict(d: dict) -> HypothesisClass:
    if d["kind"] == "coords":
        return coordinate_class(len(d["scales"]), d["scales"])
    raise click.UsageError(f"unknown class kind {d['kind']!r} in model file")


def _load_engine(path: str) -> ExpectationEngine:
    if path.endswith(".json"):
        return ExpectationEngine.exact(load_distribution(path))
    return ExpectationEngine.empirical(load_dataset(path))


@click.group()
def main():
    """Calibrated multiaccuracy training and loss-based audits."""


@main.command()
@click.option("--s", default=2, show_default=True, help="clusters per class")
@click.option("--d", default=2, show_default=True, help="dimension")
@click.option("--n-train", default=3000, show_default=True)
@click.option("--n-cal", default=1000, show_default=True)
@click.option("--n-test", default=10000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", default=".", show_default=True)
def gen(s, d, n_train, n_cal, n_test, seed, out_dir):
    """Emit train/cal/test CSV splits of the Gaussian-mixture benchmark."""
    cfg = MixtureConfig(s=s, d=d, n_train=n_train, n_cal=n_cal, n_test=n_test, seed=seed)
    try:
        train, cal, test = gen_gaussian_mixture(cfg)
    except CenterPlacementError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONVERGENCE)
    os.makedirs(out_dir, exist_ok=True)
    for name, split in (("train", train), ("cal", cal), ("test", test)):
        save_dataset(split, os.path.join(out_dir, f"{name}.csv"))
    click.echo(f"wrote train/cal/test CSVs to {out_dir}")


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--class", "class_spec", default="coords", show_default=True)
@click.option("--alpha", default=0.1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", default="model.json", show_default=True)
@click.option("--trace", "trace_path", default="trace.json", show_default=True, help="training trace file")
def train(data_path, class_spec, alpha, seed, out_path, trace_path):
    """Train a calibrated multiaccurate predictor on a CSV dataset."""
    data = load_dataset(data_path)
    hclass, class_dict = _build_class(class_spec, data.X)
    engine = ExpectationEngine.empirical(data)
    delta = alpha * alpha / 32.0
    wl = ExhaustiveWeakLearner(hclass, rho=alpha - delta, sigma=alpha - delta)
    from .core import ConstantPredictor

    p0 = ConstantPredictor(float(np.clip(np.mean(data.y), 0.0, 1.0)))
    pred, trace = calma(p0, alpha, wl, engine, config=CalmaConfig())
    model = {
        "alpha": alpha,
        "seed": seed,
        "class": class_dict,
        "predictor": pred.to_dict(),
        "final_ece": trace.final_ece,
        "final_mae": trace.final_mae,
    }
    with open(out_path, "w") as fh:
        json.dump(model, fh, indent=2)
    if trace_path:
        with open(trace_path, "w") as fh:
            json.dump(trace.to_dict(), fh, indent=2)
    click.echo(
        f"trained: ece={trace.final_ece:.4f} mae={trace.final_mae:.4f} "
        f"rounds={trace.outer_iterations} wl_calls={trace.total_wl_calls}"
    )


def _rebuild_predictor(model: dict) -> tuple:
    from .core import predictor_from_dict

    hclass = _class_from_dict(model["class"])
    return predictor_from_dict(model["predictor"], hclass), hclass


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--losses", default="l1,l2,l4", show_default=True)
@click.option("--class", "class_spec", default=None, help="audit class override; defaults to the model's")
@click.option("--out", "out_path", default="report.json", show_default=True)
@click.option("--clamp", default=1e-9, show_default=True, help="keep glm decisions finite")
def audit(model_path, data_path, losses, class_spec, out_path, clamp):
    """Run the indistinguishability audit of a trained model."""
    with open(model_path) as fh:
        model = json.load(fh)
    pred, hclass = _rebuild_predictor(model)
    engine = _load_engine(data_path)
    if class_spec is not None:
        hclass, _ = _build_class(class_spec, engine.X)
    if clamp > 0:
        base = pred
        pred = FunctionPredictor(lambda X: np.clip(base.values(X), clamp, 1.0 - clamp), name="clamped")
    loss_objs = [get_loss(name.strip()) for name in losses.split(",") if name.strip()]
    report = audit_family(pred, loss_objs, hclass.members, engine)
    payload = report.to_dict()
    payload["ece"] = ece_fn(pred, engine)
    payload["mae"] = mae_fn(pred, hclass, engine)
    with open(out_path, "w") as fh:
        json.dump(payload, fh, indent=2)
    click.echo(
        f"audited {len(payload['pairs'])} pairs: max |loss gap| = {payload['max_abs_loss_gap']:.5f}"
    )


@main.command()
@click.option("--loss", "loss_name", required=True, type=click.Choice(list(BENCH_COLUMNS)))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--test", "test_path", default=None, type=click.Path(exists=True))
def baseline(loss_name, data_path, test_path):
    """Fit the per-loss linear baseline; print train (and test) loss."""
    from .bench import column_value_for_score

    data = load_dataset(data_path)
    fit = fit_linear_baseline(loss_name, data)
    out = {
        "loss": loss_name,
        "weights": fit.w.tolist(),
        "intercept": fit.b,
        "grad_norm": fit.grad_norm,
        "train_loss": column_value_for_score(loss_name, fit.score(data.X), data.y),
    }
    if test_path:
        test = load_dataset(test_path)
        out["test_loss"] = column_value_for_score(loss_name, fit.score(test.X), test.y)
    click.echo(json.dumps(out, indent=2))
    if not fit.converged:
        sys.exit(EXIT_CONVERGENCE)


@main.command()
@click.option("--s", default=2, show_default=True)
@click.option("--d", default=2, show_default=True)
@click.option("--alpha", default=0.1, show_default=True)
@click.option("--seeds", default=5, show_default=True, help="number of seeds (0..n-1)")
@click.option("--recal", default="isotonic", type=click.Choice(["isotonic", "bucket"]), show_default=True)
@click.option("--tolerance", default=0.05, show_default=True)
@click.option("--out", "out_path", default=None, help="table file: .json, .csv or .md")
def bench(s, d, alpha, seeds, recal, tolerance, out_path):
    """Run the multi-seed benchmark table and gate the trained predictor
    against each per-loss baseline."""
    try:
        results = [
            run_benchmark(MixtureConfig(s=s, d=d, seed=seed), alpha=alpha, recal_backend=recal)
            for seed in range(seeds)
        ]
    except (CenterPlacementError, NonConvergenceError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONVERGENCE)
    agg = aggregate_results(results)
    payload = {
        "config": {"s": s, "d": d, "alpha": alpha, "recal": recal, "seeds": seeds},
        "iterations": [r.iterations for r in results],
        "table": agg,
    }
    if out_path:
        if out_path.endswith(".json"):
            with open(out_path, "w") as fh:
                json.dump(payload, fh, indent=2)
        elif out_path.endswith(".csv"):
            with open(out_path, "w") as fh:
                fh.write("algorithm," + ",".join(BENCH_COLUMNS) + "\n")
                for algo, row in agg.items():
                    fh.write(algo + "," + ",".join(f"{row[c]['mean']:.5f}" for c in BENCH_COLUMNS) + "\n")
        else:
            with open(out_path, "w") as fh:
                fh.write("| algorithm | " + " | ".join(BENCH_COLUMNS) + " |\n")
                fh.write("|" + "---|" * (len(BENCH_COLUMNS) + 1) + "\n")
                for algo, row in agg.items():
                    fh.write(
                        "| " + algo + " | " + " | ".join(f"{row[c]['mean']:.3f}" for c in BENCH_COLUMNS) + " |\n"
                    )
    for algo, row in agg.items():
        click.echo(algo + ": " + "  ".join(f"{c}={row[c]['mean']:.3f}" for c in BENCH_COLUMNS))
    bad = [
        c
        for c in BENCH_COLUMNS
        if agg["calma"][c]["mean"] > agg["optimal"][c]["mean"] + tolerance
    ]
    if bad:
        click.echo(f"trained predictor exceeds baseline + {tolerance} on: {', '.join(bad)}", err=True)
        sys.exit(EXIT_THRESHOLD)


@main.command()
@click.option("--which", required=True, type=click.Choice(["parity", "sim"]))
@click.option("--resolution", default=100, show_default=True, help="sim grid resolution")
def counterexamples(which, resolution):
    """Run an exact counterexample construction and check its thresholds."""
    if which == "parity":
        report = parity_counterexample()
        click.echo(json.dumps(report.to_dict(), indent=2))
        ok = (
            abs(report.l4_hypothesis_gap - 4.0 / 9.0) <= 1e-12
            and report.mae <= 1e-12
            and report.l2_omni_regret <= 1e-9
            and report.l4_omni_regret <= 1e-9
        )
    else:
        report = sim_counterexample(resolution)
        click.echo(json.dumps(report.to_dict(), indent=2))
        ok = report.min_violation > 0.05 and report.ma_system_residual <= 1e-12
    if not ok:
        sys.exit(EXIT_THRESHOLD)


if __name__ == "__main__":
    main()
