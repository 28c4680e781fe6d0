"""Command-line front end: ingestion, pipeline stages, and report emission.

One subcommand per pipeline stage (simulate, fit-propensity, estimate, bias,
compose, evaluate, model-fit, model-predict, sweep) plus an end-to-end
``pipeline`` command; stages communicate through delimited files so partial
pipelines stay scriptable. Every number a command writes comes from a
library call on the ingested data; the CLI performs no arithmetic of its
own. Each output directory gets a ``run_metadata.json`` sidecar recording
the command, options, and seed, so any artifact is reproducible from its
recorded configuration.

Survey files are comma-separated UTF-8 with a header: an ``id`` column,
demographic columns, question columns named ``q_<question_id>`` holding
1/0/empty (empty = item nonresponse), and an optional ``weight`` column
whose presence selects the probability-sample container.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib.metadata import version as _pkg_version
from pathlib import Path

import numpy as np

from . import benchmark as bm
from . import composite as comp
from . import estimators as est
from . import response_model as rm
from . import simulate as sim
from .propensity import DEFAULT_MAX_ITER, DEFAULT_PI_CLIP, DEFAULT_TOL, fit_propensity
from .samples import (
    CovariateSchema,
    EstimateTable,
    MeanEstimate,
    NonprobabilitySample,
    ProbabilitySample,
    SubgroupKey,
    validate_sample,
)


class IngestError(ValueError):
    """A survey file violates the documented format."""


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# survey ingestion and emission


def read_schema(path) -> CovariateSchema:
    with open(path, encoding="utf-8") as fh:
        return CovariateSchema(json.load(fh))


def write_schema(schema: CovariateSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: list(v) for k, v in schema.variables.items()}, fh, indent=2)
        fh.write("\n")


def ingest_survey(path, schema: CovariateSchema | None = None):
    """Read a survey file into the matching sample container.

    Returns (sample, ids, validation_report). A ``weight`` column selects
    ProbabilitySample; otherwise a NonprobabilitySample is built. Without a
    supplied schema, factor levels are taken in sorted order, making the
    alphabetically first level of each factor the dummy-coding reference.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise IngestError(f"{path}: missing required column 'id'")
        fields = list(reader.fieldnames)
        rows = list(reader)
    question_cols = [c for c in fields if c.startswith("q_")]
    if not question_cols:
        raise IngestError(f"{path}: no question columns (expected q_<id> names)")
    has_weight = "weight" in fields
    demo_cols = [c for c in fields if c not in {"id", "weight"} and not c.startswith("q_")]
    if not demo_cols:
        raise IngestError(f"{path}: no demographic columns")

    if schema is None:
        levels = {c: sorted({row[c] for row in rows}) for c in demo_cols}
        schema = CovariateSchema(levels)
    missing = [c for c in demo_cols if c not in schema.variables]
    if missing:
        raise IngestError(f"{path}: schema lacks variables {missing}")

    ids = [row["id"] for row in rows]
    X = schema.encode([{c: row[c] for c in schema.variables} for row in rows])
    y = np.full((len(rows), len(question_cols)), np.nan)
    for i, row in enumerate(rows):
        for j, col in enumerate(question_cols):
            raw = (row[col] or "").strip()
            if raw == "":
                continue
            try:
                value = float(raw)
            except ValueError as err:
                raise IngestError(f"{path}: row {i}: malformed value {raw!r} in {col}") from err
            if value not in (0.0, 1.0):
                raise IngestError(f"{path}: row {i}: {col} must be 1/0/empty, got {raw!r}")
            y[i, j] = value
    groups = {c: np.array([row[c] for row in rows], dtype=object) for c in demo_cols}
    questions = tuple(c[2:] for c in question_cols)

    if has_weight:
        weights = np.empty(len(rows))
        for i, row in enumerate(rows):
            try:
                weights[i] = float(row["weight"])
            except ValueError as err:
                raise IngestError(
                    f"{path}: row {i}: malformed weight {row['weight']!r}"
                ) from err
            if weights[i] <= 0.0:
                raise IngestError(f"{path}: row {i}: nonpositive weight {row['weight']!r}")
        sample = ProbabilitySample(X, y, weights, questions, groups, schema)
    else:
        sample = NonprobabilitySample(X, y, questions, groups, schema)
    return sample, ids, validate_sample(sample)


def write_survey(path, sample, ids=None) -> None:
    demo = list(sample.groups)
    header = ["id"] + demo + (
        ["weight"] if isinstance(sample, ProbabilitySample) else []
    ) + [f"q_{q}" for q in sample.questions]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(sample.n):
            row = [str(ids[i]) if ids is not None else str(i)]
            row += [str(sample.groups[c][i]) for c in demo]
            if isinstance(sample, ProbabilitySample):
                row.append(repr(float(sample.weights[i])))
            for j in range(len(sample.questions)):
                v = sample.y[i, j]
                row.append("" if np.isnan(v) else str(int(v)))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# estimate / bias tables on disk


def write_estimate_table(table: EstimateTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "factor", "level", "value", "variance",
                         "source", "out_of_range"])
        for q in table.questions:
            for c in table.subgroups:
                e = table.entries[(q, c)]
                writer.writerow([
                    q, c.factor, c.level, _fmt(e.value), _fmt(e.variance),
                    e.source, int(e.out_of_range),
                ])


def read_estimate_table(path, survey: str | None = None) -> EstimateTable:
    entries = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            variance = float(row["variance"]) if row.get("variance") else None
            entries[(row["question_id"], SubgroupKey(row["factor"], row["level"]))] = (
                MeanEstimate(
                    float(row["value"]), variance, row["source"],
                    bool(int(row.get("out_of_range") or 0)),
                )
            )
    return EstimateTable(entries, survey=survey)


def write_bias_matrix(bias: bm.BiasMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "factor", "level", "eps"])
        for (q, c), v in bias.entries.items():
            writer.writerow([q, c.factor, c.level, _fmt(v)])


def read_bias_matrix(path) -> bm.BiasMatrix:
    entries = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            entries[(row["question_id"], SubgroupKey(row["factor"], row["level"]))] = (
                float(row["eps"])
            )
    return bm.BiasMatrix(entries, provenance=((str(path), "file"),))


def write_mae_report(report: bm.MaeReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "factor", "level", "question_id", "mae_percent"])
        writer.writerow(["overall", "", "", "", _fmt(report.overall)])
        for q, v in report.per_question.items():
            writer.writerow(["question", "", "", q, _fmt(v)])
        for c, v in report.per_subgroup.items():
            writer.writerow(["subgroup", c.factor, c.level, "", _fmt(v)])


def _write_metadata(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    options = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k != "func"
    }
    payload = {
        "command": command,
        "package": "surveyblend",
        "version": _pkg_version("surveyblend"),
        "options": options,
    }
    with open(out_dir / "run_metadata.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_spec(args) -> sim.PopulationSpec:
    if args.spec:
        return sim.PopulationSpec.from_json(args.spec)
    return sim.default_population_spec()


def _maybe_schema(args) -> CovariateSchema | None:
    return read_schema(args.schema) if getattr(args, "schema", None) else None


def _fit_options(args) -> dict:
    return {"tol": args.tol, "max_iter": args.max_iter, "pi_clip": args.pi_clip}


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    spec = _load_spec(args)
    pop = sim.generate_population(spec, args.seed)
    spec.to_json(out / "population_spec.json")
    write_schema(pop.schema, out / "schema.json")
    bm.write_benchmark_table(
        pop.truth_benchmark(factors=(spec.bogus.factor,)), out / "truth_benchmark.csv"
    )
    for k in (1, 2, 3):
        ps, draw = sim.draw_survey_pair(pop, args.seed, pair_tag=k, contaminate=True)
        write_survey(out / f"ps{k}.csv", ps)
        write_survey(out / f"optin{k}.csv", draw.sample)
    _write_metadata(out, "simulate", args)
    return 0


def cmd_fit_propensity(args) -> int:
    out = _out_dir(args)
    schema = _maybe_schema(args)
    nps, ids, nps_report = ingest_survey(args.nps, schema)
    ps, _, ps_report = ingest_survey(args.ps, schema or nps.schema)
    if isinstance(nps, ProbabilitySample) or not isinstance(ps, ProbabilitySample):
        raise IngestError("--nps must have no weight column and --ps must have one")
    fit = fit_propensity(nps.X, ps.X, ps.weights, weight_label=args.weight_label,
                         **_fit_options(args))
    with open(out / "propensity_coefficients.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["column", "coefficient"])
        names = nps.schema.column_names() if nps.schema else [
            f"x{j}" for j in range(nps.X.shape[1])
        ]
        for name, value in zip(names, fit.theta):
            writer.writerow([name, _fmt(float(value))])
    with open(out / "propensities.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "pi_hat"])
        for unit_id, pi in zip(ids, fit.pi):
            writer.writerow([unit_id, _fmt(float(pi))])
    with open(out / "fit_diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "n_hat": fit.n_hat,
                "iterations": fit.iterations,
                "score_norm": fit.score_norm,
                "converged": fit.converged,
                "weight_label": fit.weight_label,
                "validation": {"nps": nps_report, "ps": ps_report},
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    _write_metadata(out, "fit-propensity", args)
    return 0


def _read_predictions(path, questions, n_units):
    by_question: dict[str, dict[int, float]] = {q: {} for q in questions}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            by_question[row["question_id"]][int(row["row_index"])] = float(row["p_hat"])
    out = {}
    for q in questions:
        values = np.full(n_units, np.nan)
        for i, p in by_question[q].items():
            values[i] = p
        if np.isnan(values).any():
            raise IngestError(f"predictions for {q!r} do not cover every unit")
        out[q] = est.PredictedProbabilities(q, values)
    return out


def cmd_estimate(args) -> int:
    out = _out_dir(args)
    schema = _maybe_schema(args)
    sample, _, report = ingest_survey(args.survey, schema)
    factors = tuple(args.by or ())
    if isinstance(sample, ProbabilitySample):
        table = est.ps_estimate_table(sample, factors=factors, source=args.source)
    else:
        if not args.reference:
            raise IngestError("a nonprobability survey needs --reference <ps file>")
        ps, _, _ = ingest_survey(args.reference, schema or sample.schema)
        if not isinstance(ps, ProbabilitySample):
            raise IngestError("--reference file must carry a weight column")
        fit = fit_propensity(sample.X, ps.X, ps.weights, **_fit_options(args))
        if args.predictions:
            predictions = _read_predictions(args.predictions, sample.questions, sample.n)
            table = est.model_assisted_table(predictions, sample, fit, factors=factors)
        else:
            variances = est.bootstrap_ipw_table_variances(
                sample, ps, factors=factors, n_replicates=args.bootstrap_b,
                seed=args.seed, fit_options=_fit_options(args),
            )
            table = est.ipw_estimate_table(sample, fit, factors=factors, variances=variances)
    write_estimate_table(table, out / "estimates.csv")
    with open(out / "validation.json", "w", encoding="utf-8") as fh:
        json.dump({"survey": report}, fh, indent=2)
        fh.write("\n")
    _write_metadata(out, "estimate", args)
    return 0


def cmd_bias(args) -> int:
    out = _out_dir(args)
    nps_tables = [read_estimate_table(p, survey=Path(p).stem) for p in args.nps_estimates]
    ps_tables = [read_estimate_table(p, survey=Path(p).stem) for p in args.ps_estimates]
    bias = bm.estimate_bias(nps_tables, ps_tables)
    write_bias_matrix(bias, out / "bias.csv")
    with open(out / "bias_provenance.json", "w", encoding="utf-8") as fh:
        json.dump({"pairs": [list(p) for p in bias.provenance]}, fh, indent=2)
        fh.write("\n")
    _write_metadata(out, "bias", args)
    return 0


def cmd_compose(args) -> int:
    out = _out_dir(args)
    ps_table = read_estimate_table(args.ps_estimates)
    nps_table = read_estimate_table(args.nps_estimates)
    bias = read_bias_matrix(args.bias).entries if args.bias else None
    method = args.method.replace("-", "_")
    composed = comp.compose_tables(ps_table, nps_table, method=method, bias=bias)
    write_estimate_table(composed, out / "composite.csv")
    _write_metadata(out, "compose", args)
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    benchmark = bm.read_benchmark_table(args.benchmark)
    tables = {}
    for path in args.estimates:
        table = read_estimate_table(path)
        tag = table.entries[next(iter(table.entries))].source
        tables[f"{Path(path).stem}:{tag}"] = table
    with open(out / "mae.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table", "scope", "factor", "level", "question_id", "mae_percent"])
        for name, table in tables.items():
            report = bm.mae(table, benchmark)
            writer.writerow([name, "overall", "", "", "", _fmt(report.overall)])
            for q, v in report.per_question.items():
                writer.writerow([name, "question", "", "", q, _fmt(v)])
            for c, v in report.per_subgroup.items():
                writer.writerow([name, "subgroup", c.factor, c.level, "", _fmt(v)])
    rows = bm.plot_records(tables, benchmark)
    bm.write_plot_records(rows, out / "abs_diff.csv")
    with open(out / "max_abs_diff.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table", "question_id", "factor", "level", "max_abs_diff"])
        for name, table in tables.items():
            diff = bm.abs_diff_table(table, benchmark)
            q, c = diff.max_cell
            writer.writerow([name, q, c.factor, c.level, _fmt(diff.max_abs_diff)])
    _write_metadata(out, "evaluate", args)
    return 0


def cmd_model_fit(args) -> int:
    out = _out_dir(args)
    sample, _, _ = ingest_survey(args.ps, _maybe_schema(args))
    if not isinstance(sample, ProbabilitySample):
        raise IngestError("model-fit expects a probability sample (weight column)")
    stacked = rm.build_training_set(sample)
    train, test = rm.split_training_set(stacked, args.test_fraction, args.seed)
    config = rm.GBMConfig(
        n_trees=args.trees, max_depth=args.depth,
        shrinkage=args.shrinkage, min_node=args.min_node,
    )
    model = rm.fit_gbm(train, config)
    rm.save_model(model, out / "model.json")
    evaluation = rm.evaluate_classifier(model, test)
    with open(out / "model_eval.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "accuracy": evaluation.accuracy,
                "auc": evaluation.auc,
                "log_loss": evaluation.log_loss,
                "train_rows": train.n_rows,
                "test_rows": test.n_rows,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    with open(out / "roc.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in evaluation.roc:
            writer.writerow([_fmt(float(fpr)), _fmt(float(tpr)), _fmt(float(thr))])
    _write_metadata(out, "model-fit", args)
    return 0


def cmd_model_predict(args) -> int:
    out = _out_dir(args)
    model = rm.load_model(args.model)
    sample, ids, _ = ingest_survey(args.nps, _maybe_schema(args))
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "id", "question_id", "p_hat"])
        for q in model.questions:
            p = rm.predict_for_sample(model, sample, q)
            for i, (unit_id, value) in enumerate(zip(ids, p.values)):
                writer.writerow([i, unit_id, q, _fmt(float(value))])
    _write_metadata(out, "model-predict", args)
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    spec = _load_spec(args)
    pop = sim.generate_population(spec, args.seed)
    sizes = [int(s) for s in args.sizes.split(",")]
    result = sim.sample_size_sweep(pop, sizes, args.replicates, args.seed)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "mae_ps", "mae_comb", "pct_change"])
        for row in result.rows:
            writer.writerow([row.size, _fmt(row.mae_ps), _fmt(row.mae_comb),
                             _fmt(row.pct_change)])
    _write_metadata(out, "sweep", args)
    return 0


def cmd_pipeline(args) -> int:
    """End-to-end: simulate, fit, estimate, bias-correct, compose, evaluate."""
    out = _out_dir(args)
    spec = _load_spec(args)
    pop = sim.generate_population(spec, args.seed)
    factor = spec.bogus.factor
    benchmark = pop.truth_benchmark(factors=(factor,))
    bm.write_benchmark_table(benchmark, out / "truth_benchmark.csv")

    pairs = [
        sim.draw_survey_pair(pop, args.seed, pair_tag=k, contaminate=True)
        for k in (1, 2, 3)
    ]
    ps_tables, clw_tables = [], []
    for k, (ps, draw) in enumerate(pairs, start=1):
        fit = fit_propensity(draw.sample.X, ps.X, ps.weights, **_fit_options(args))
        variances = est.bootstrap_ipw_table_variances(
            draw.sample, ps, factors=(factor,), n_replicates=args.bootstrap_b,
            seed=args.seed + k, fit_options=_fit_options(args),
        )
        ps_tables.append(est.ps_estimate_table(ps, factors=(factor,), survey=f"ps{k}"))
        clw_tables.append(
            est.ipw_estimate_table(draw.sample, fit, factors=(factor,),
                                   variances=variances, survey=f"optin{k}")
        )
        write_estimate_table(ps_tables[-1], out / f"estimates_ps{k}.csv")
        write_estimate_table(clw_tables[-1], out / f"estimates_optin{k}.csv")
    bias = bm.estimate_bias(clw_tables[:2], ps_tables[:2])
    write_bias_matrix(bias, out / "bias.csv")
    bc = bm.apply_bias_correction(clw_tables[2], bias)
    write_estimate_table(bc, out / "estimates_bc_optin3.csv")
    tables = {
        "ps": ps_tables[2],
        "clw": clw_tables[2],
        "bc_clw": bc,
        "comb": comp.compose_tables(ps_tables[2], clw_tables[2], method="comb",
                                    bias=bias.entries),
        "ev": comp.compose_tables(ps_tables[2], clw_tables[2], method="ev",
                                  bias=bias.entries),
    }
    write_estimate_table(tables["comb"], out / "estimates_comb.csv")
    write_estimate_table(tables["ev"], out / "estimates_ev.csv")
    with open(out / "mae.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "mae_percent"])
        for tag, table in tables.items():
            writer.writerow([tag, _fmt(bm.mae(table, benchmark).overall)])
    bm.write_plot_records(bm.plot_records(tables, benchmark), out / "abs_diff.csv")
    _write_metadata(out, "pipeline", args)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=DEFAULT_TOL,
                   help="score convergence tolerance (infinity norm)")
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--pi-clip", type=float, default=DEFAULT_PI_CLIP,
                   help="clip fitted propensities into [clip, 1-clip]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surveyblend",
        description="Integrate probability and nonprobability survey samples.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic population and six surveys")
    p.add_argument("--spec", help="population spec JSON (defaults to the built-in spec)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-propensity", help="fit the participation propensity model")
    p.add_argument("--nps", required=True)
    p.add_argument("--ps", required=True)
    p.add_argument("--schema")
    p.add_argument("--weight-label", default="design",
                   help="records which ps weight column was designated")
    _add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_propensity)

    p = sub.add_parser("estimate", help="per-question mean estimates from one survey")
    p.add_argument("--survey", required=True)
    p.add_argument("--reference", help="ps file (required for nonprobability surveys)")
    p.add_argument("--predictions", help="model-predict output for model-assisted IPW")
    p.add_argument("--by", action="append", help="add subgroup cells for this factor")
    p.add_argument("--schema")
    p.add_argument("--source", default="ps", choices=["ps", "cal"],
                   help="tag for weighted ps estimates (base vs calibrated weights)")
    p.add_argument("--bootstrap-B", dest="bootstrap_b", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    _add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bias", help="cross-pair measurement-error bias matrix")
    p.add_argument("--nps-estimates", nargs="+", required=True)
    p.add_argument("--ps-estimates", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("compose", help="combine ps and nps estimate tables")
    p.add_argument("--ps-estimates", required=True)
    p.add_argument("--nps-estimates", required=True)
    p.add_argument("--bias", help="bias matrix CSV (defaults to zero bias)")
    p.add_argument("--method", default="comb", choices=["comb", "ev", "m-comb", "m-ev"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("evaluate", help="MAE and absolute differences vs a benchmark")
    p.add_argument("--estimates", nargs="+", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("model-fit", help="fit the boosted response model on a ps file")
    p.add_argument("--ps", required=True)
    p.add_argument("--schema")
    p.add_argument("--trees", type=int, default=rm.GBMConfig().n_trees)
    p.add_argument("--depth", type=int, default=rm.GBMConfig().max_depth)
    p.add_argument("--shrinkage", type=float, default=rm.GBMConfig().shrinkage)
    p.add_argument("--min-node", type=int, default=rm.GBMConfig().min_node)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_model_fit)

    p = sub.add_parser("model-predict", help="score a nonprobability survey")
    p.add_argument("--model", required=True)
    p.add_argument("--nps", required=True)
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_model_predict)

    p = sub.add_parser("sweep", help="MAE of ps vs composite across ps sample sizes")
    p.add_argument("--spec")
    p.add_argument("--sizes", required=True, help="comma-separated, descending")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline", help="end-to-end simulate/estimate/correct/compose")
    p.add_argument("--spec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bootstrap-B", dest="bootstrap_b", type=int, default=200)
    _add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single structured exit point
        print(f"surveyblend {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
