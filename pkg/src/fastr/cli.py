"""Command line entry point.

Subcommands: ``simulate`` (write a synthetic dataset plus its truth
table), ``fit`` (train a model from a config and CSV), ``predict``
(score new rows with a saved model), ``evaluate`` (per-term integrated
squared errors against a truth table, plus effect-grid exports), and
``bench-mem`` (memory/time scaling table).

Exit codes: 0 success, 2 config/schema/data validation failure,
3 numeric failure, 1 anything else. Inputs are validated before any
output file is created.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from . import fit as fit_mod
from . import membench
from . import simulate as sim_mod
from . import terms as terms_mod
from .errors import (ConfigError, DataError, FastrError,
                     NotPositiveDefiniteError, SchemaError, TrainingDiverged)

TRUTH_PREFIX = "truth:"


def _require(value, flag: str):
    if value is None:
        raise SchemaError(f"this command requires {flag}")
    return value


def _model_data_schema(model: fit_mod.FittedModel, with_outcome: bool) -> data_mod.Schema:
    numeric: list[str] = []
    categorical: list[str] = []
    for t in model.spec.terms:
        for f in terms_mod.numeric_features(t):
            if f not in numeric:
                numeric.append(f)
        for f in terms_mod.categorical_features(t):
            if f not in categorical:
                categorical.append(f)
    return data_mod.Schema(numeric=tuple(numeric), categorical=tuple(categorical),
                           outcome=None if not with_outcome else "y")


def _write_rows_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_table_csv(path: Path, table: dict) -> None:
    names = list(table)
    length = len(table[names[0]]) if names else 0
    rows = [[table[n][i] for n in names] for i in range(length)]
    _write_rows_csv(path, names, rows)


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name).strip("_")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    doc = config_mod.load_config(_require(args.config, "--config"))
    spec = config_mod.parse_dgp(config_mod.require_section(doc, "dgp"), args.seed)
    out_dir = Path(_require(args.out, "--out"))
    dataset, truth = sim_mod.generate(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_mod.write_csv(dataset, str(out_dir / "data.csv"))
    extra = {f"{TRUTH_PREFIX}{name}": vals
             for name, vals in truth.row_values.items()}
    extra["eta"] = truth.eta
    data_mod.write_csv(dataset, str(out_dir / "truth.csv"), extra=extra)
    print(f"wrote {dataset.n_rows} rows to {out_dir / 'data.csv'}")
    for name, levels in dataset.levels.items():
        print(f"  categorical {name}: {len(levels)} levels")
    print(f"truth table columns: {', '.join(sorted(truth.row_values))}")
    return 0


def cmd_fit(args) -> int:
    doc = config_mod.load_config(_require(args.config, "--config"))
    schema = config_mod.parse_data_schema(config_mod.require_section(doc, "data"))
    model_spec = config_mod.parse_model(config_mod.require_section(doc, "model"))
    fit_cfg = config_mod.parse_fit(doc.get("fit", {}), args.seed)
    dataset = data_mod.read_csv(_require(args.data, "--data"), schema)
    model_path = Path(_require(args.model, "--model"))
    report_path = Path(args.out) if args.out else model_path.with_suffix(
        model_path.suffix + ".report.json")

    model, report = fit_mod.train(model_spec, dataset, fit_cfg)

    fit_mod.save_model(model, str(model_path))
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    final_train = report.train_loss[-1] if report.train_loss else float("nan")
    print(f"final train loss {final_train:.6f}")
    if report.val_loss:
        print(f"best validation loss {report.best_val_loss:.6f} "
              f"(epoch {report.best_epoch})")
    print(f"stopped after {report.epochs_run} epochs: {report.stopping_reason}")
    print(f"model written to {model_path}")
    return 0


def cmd_predict(args) -> int:
    model = fit_mod.load_model(_require(args.model, "--model"))
    schema = _model_data_schema(model, with_outcome=False)
    dataset = data_mod.read_csv(_require(args.data, "--data"), schema)
    out_path = Path(_require(args.out, "--out"))
    yhat, unseen = fit_mod.predict(model, dataset)
    _write_rows_csv(out_path, ["row", "yhat"],
                    [[i, repr(float(v))] for i, v in enumerate(yhat)])
    print(f"wrote {yhat.size} predictions to {out_path}")
    print(f"unseen-level warnings: {unseen}")
    return 0


def _truth_columns(path: str) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        wanted = {i: name for i, name in enumerate(header)
                  if name.startswith(TRUTH_PREFIX)}
        values: dict[int, list[float]] = {i: [] for i in wanted}
        for rownum, row in enumerate(reader):
            for i in wanted:
                try:
                    values[i].append(float(row[i]))
                except (ValueError, IndexError):
                    raise DataError(f"{path}: bad truth value at row {rownum}, "
                                    f"column {header[i]!r}") from None
    return {wanted[i][len(TRUTH_PREFIX):]: np.asarray(v)
            for i, v in values.items()}


def _term_mise(model: fit_mod.FittedModel, name: str, contrib: np.ndarray,
               truth_vals: np.ndarray, coded: data_mod.Dataset) -> float:
    spec = next(t for t in model.spec.terms if terms_mod.term_name(t) == name)
    if isinstance(spec, terms_mod.Smooth):
        return sim_mod.grouped_mise(contrib, truth_vals,
                                    coded.numeric[spec.feature])
    if isinstance(spec, terms_mod.VaryingCoefficient):
        return sim_mod.grouped_mise(contrib, truth_vals,
                                    coded.numeric[spec.feature_t],
                                    coded.codes[spec.feature])
    if isinstance(spec, terms_mod.FactorizedVaryingCoefficient):
        n_u = len(coded.levels[spec.feature_u])
        pairs = coded.codes[spec.feature_i] * n_u + coded.codes[spec.feature_u]
        return sim_mod.grouped_mise(contrib, truth_vals,
                                    coded.numeric[spec.feature_t], pairs)
    # coefficient-style terms: centered mean squared error, uniform weights
    return sim_mod.mise(contrib, truth_vals, np.ones(contrib.size))


def cmd_evaluate(args) -> int:
    model = fit_mod.load_model(_require(args.model, "--model"))
    truth_path = _require(args.data, "--data")
    out_dir = Path(_require(args.out, "--out"))
    schema = _model_data_schema(model, with_outcome=False)
    dataset = data_mod.read_csv(truth_path, schema)
    truth_cols = _truth_columns(truth_path)
    if not truth_cols:
        raise SchemaError(f"{truth_path}: no '{TRUTH_PREFIX}*' columns found")
    model_names = {terms_mod.term_name(t) for t in model.spec.terms}
    missing = sorted(set(truth_cols) - model_names)
    if missing:
        raise SchemaError(
            f"truth columns without a matching model term: {', '.join(missing)}")

    contribs = fit_mod.term_contributions(model, dataset)
    coded, _ = data_mod.recode(dataset, model.level_maps)
    results = []
    for name in sorted(truth_cols):
        value = _term_mise(model, name, contribs[name], truth_cols[name], coded)
        results.append((name, value))

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows_csv(out_dir / "mise.csv", ["term", "mise"],
                    [[n, repr(v)] for n, v in results])
    effects = fit_mod.export_effects(model)
    for name, table in effects.items():
        _write_table_csv(out_dir / f"effect_{_safe_name(name)}.csv", table)
    print(f"{'term':<40} mise")
    for n, v in results:
        print(f"{n:<40} {v:.6f}")
    print(f"effect grids written to {out_dir}")
    return 0


def cmd_bench_mem(args) -> int:
    doc = config_mod.load_config(_require(args.config, "--config"))
    cfg = config_mod.parse_bench(doc.get("bench", {}), args.seed)
    out_path = Path(_require(args.out, "--out"))
    rows = membench.run_benchmark(cfg)
    header = ["kind", "levels", "n", "epochs", "phase_peak_bytes",
              "epoch_peak_bytes", "wall_time_s"]
    _write_rows_csv(out_path, header, [[r[h] for h in header] for r in rows])
    print(f"{'kind':<10}{'levels':>8}{'n':>8}{'phase_peak':>14}"
          f"{'epoch_peak':>14}{'time_s':>10}")
    for r in rows:
        print(f"{r['kind']:<10}{r['levels']:>8}{r['n']:>8}"
              f"{r['phase_peak_bytes']:>14}{r['epoch_peak_bytes']:>14}"
              f"{r['wall_time_s']:>10.3f}")
    print(f"benchmark table written to {out_path}")
    return 0


# ---------------------------------------------------------------------------


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "bench-mem": cmd_bench_mem,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastr",
        description="Factorized structured regression: fit, simulate, "
                    "predict, evaluate, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config document (fastr-config/1)")
        p.add_argument("--data", help="input CSV (data or truth table)")
        p.add_argument("--model", help="model JSON path (input or output)")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SchemaError, ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NotPositiveDefiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (FastrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
