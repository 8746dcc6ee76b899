"""Command line entry point: ``balmatch <command> ...``.

Exit status is 0 on success, 1 for invalid input or flags, 2 for internal
errors. Every report carries a provenance block (input digest, flags, seed,
tool version) and is byte-identical for identical input, flags and seed.
Flags ``--precision``, ``--seed``, ``--iterations``, ``--mode``, ``--format``
and ``--guard`` fall back to ``BALMATCH_<NAME>`` environment variables.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from fractions import Fraction

from . import __version__, figures, pitfalls
from .cohort import DEFAULT_PRECISION, CohortError, SortKey, parse_cohort, serialize_cohort
from .dbsem import dbsem, rational, report as dbsem_report
from .oracle import DEFAULT_GUARD, enumerate_expectation
from .propensity import PropensityModel, fit_logistic
from .psm import (
    EXTREME_MODES,
    PSEquality,
    exact_psm_with_replacement,
    extreme_matching,
    greedy_exact_psm,
    matching_deaths,
    uniform_bootstrap_psm,
)
from .stats import WeightedSample, chi_square_2x2, t_test_two_sample
from .synth import SynthError, synth_cohort

ENV_PREFIX = "BALMATCH_"
_ENV_FLAGS = {"precision": int, "seed": int, "iterations": int, "mode": str, "format": str, "guard": int}
_BUILTIN = {"precision": DEFAULT_PRECISION, "seed": None, "iterations": 10_000, "format": "json", "guard": DEFAULT_GUARD}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class Report:
    """A command's result: JSON payload plus rows for the csv/table renderings."""

    def __init__(self, data: dict, rows: list[dict] | None = None, title: str = ""):
        self.data = data
        self.rows = rows if rows is not None else [{"key": k, "value": _scalar(v)} for k, v in data.items()]
        self.title = title


def _scalar(v):
    if isinstance(v, dict) and set(v) == {"exact", "decimal"}:
        return v["decimal"]
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return v


def _pct(x) -> str:
    return f"{100 * float(x):.1f}%"


def _render(report: Report, fmt: str, provenance: dict) -> str:
    if fmt == "json":
        return json.dumps({**report.data, "provenance": provenance}, sort_keys=True, indent=2) + "\n"
    if not report.rows:
        return ""
    columns = list(report.rows[0])
    if fmt == "csv":
        out = io.StringIO()
        w = csv.DictWriter(out, columns, lineterminator="\n")
        w.writeheader()
        w.writerows(report.rows)
        return out.getvalue()
    cells = [[str(r.get(c, "")) for c in columns] for r in report.rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = [report.title] if report.title else []
    lines.append(" | ".join(c.ljust(w) for c, w in zip(columns, widths)))
    lines.append("-+-".join("-" * w for w in widths))
    lines.extend(" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells)
    return "\n".join(lines) + "\n"


def _read_input(args) -> tuple[bytes, object]:
    with open(args.input, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CohortError(f"input is not UTF-8: {exc}") from None
    return raw, parse_cohort(text, args.precision)


def _result_row(label, deaths_a, deaths_b, pairs, test=None) -> dict:
    row = {
        "result": label,
        "A count": f"{float(deaths_a):.2f}".rstrip("0").rstrip("."),
        "A %": _pct(deaths_a / pairs) if pairs else "n/a",
        "B count": f"{float(deaths_b):.2f}".rstrip("0").rstrip("."),
        "B %": _pct(deaths_b / pairs) if pairs else "n/a",
    }
    row["p-value"] = "" if test is None else _fmt_p(test.p_value)
    return row


def _fmt_p(p: float) -> str:
    return "<0.0001" if p < 1e-4 else f"{p:.4f}"


def _chi(deaths_a, deaths_b, pairs):
    if not pairs:
        return None
    return chi_square_2x2(float(deaths_a), pairs, float(deaths_b), pairs)


# commands ------------------------------------------------------------------


def cmd_fit(args, cohort) -> Report:
    model = fit_logistic(cohort, args.tolerance, args.max_iterations)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(model.to_json() + "\n")
    d = model.to_dict()
    rows = [{"term": "intercept", "coefficient": repr(model.intercept)}] + [
        {"term": f"cv_{j}", "coefficient": repr(b)} for j, b in zip(model.kept_columns, model.coefficients[1:])
    ]
    return Report(d, rows, "Logistic propensity model")


def _load_model(path) -> PropensityModel:
    with open(path, encoding="utf-8") as fh:
        return PropensityModel.from_json(fh.read())


def cmd_psm(args, cohort) -> Report:
    mode = args.mode or "greedy"
    if mode == "greedy":
        equality = "covariate"
        if args.equality == "ps":
            model = _load_model(args.model) if args.model else fit_logistic(cohort)
            equality = PSEquality(model, args.epsilon)
        m = greedy_exact_psm(cohort, equality, args.seed)
    elif mode == "replacement":
        m = exact_psm_with_replacement(cohort)
    else:
        raise UsageError(f"psm --mode must be greedy or replacement, got {mode!r}")
    if args.out:
        m.write(args.out)
    da, db = matching_deaths(m, cohort)
    data = {**m.sidecar(), "deaths_a": rational(da), "deaths_b": rational(db),
            "pairs": [list(p) for p in m.pairs]}
    if m.reverse_pairs:
        data["reverse_pairs"] = [list(p) for p in m.reverse_pairs]
    rows = [{"a_id": a, "b_id": b} for a, b in m.pairs]
    return Report(data, rows, f"{mode} matching")


def _extreme_rows(cohort, modes):
    rows = []
    for mode in modes:
        m = extreme_matching(cohort, mode)
        da, db = matching_deaths(m, cohort)
        rows.append((mode, da, db, len(m.pairs)))
    return rows


def cmd_extreme(args, cohort) -> Report:
    modes = EXTREME_MODES if args.mode in (None, "all") else (args.mode,)
    results = _extreme_rows(cohort, modes)
    data = {
        mode: {"deaths_a": rational(da), "deaths_b": rational(db), "pairs": n,
               "chi_square": (_chi(da, db, n).to_dict() if n else None)}
        for mode, da, db, n in results
    }
    rows = [_result_row(mode, da, db, n, _chi(da, db, n)) for mode, da, db, n in results]
    if args.figure:
        figures.envelope([{"label": r[0], "deaths_a": r[1], "deaths_b": r[2]} for r in results], args.figure)
    return Report(data, rows, "Exact 1:1 matching envelopes")


def cmd_bootstrap(args, cohort) -> Report:
    if args.seed is None:
        raise UsageError("seed required")
    if args.iterations < 1:
        raise UsageError("iterations must be >= 1")
    rep = uniform_bootstrap_psm(cohort, args.iterations, args.seed, workers=args.workers)
    res = dbsem(cohort).result
    data = rep.to_dict()
    data["dbsem"] = {"r_a": rational(res.r_a), "r_b": rational(res.r_b)}
    t = None
    if rep.pairs and cohort.binary_outcomes:
        t = t_test_two_sample(
            WeightedSample.binary(rep.mean_deaths_a, rep.pairs), WeightedSample.binary(rep.mean_deaths_b, rep.pairs)
        )
        data["t_test"] = t.to_dict()
    rows = [
        _result_row(f"Uniform bootstrapping ({rep.iterations} samples)", rep.mean_deaths_a, rep.mean_deaths_b,
                    rep.pairs, t),
        _result_row("Min-weighted DBSeM", res.r_a, res.r_b, res.matched_pairs_total),
    ]
    if args.figure:
        figures.bootstrap_trace(rep.samples_a, rep.samples_b, float(res.r_a), float(res.r_b), args.figure)
    return Report(data, rows, "Uniformly bootstrapped exact PSM")


def cmd_dbsem(args, cohort) -> Report:
    data = dbsem_report(cohort, args.method, args.members)
    pairs = data["matched_pairs_total"]
    r_a, r_b = Fraction(data["r_a"]["exact"]), Fraction(data["r_b"]["exact"])
    if pairs and cohort.binary_outcomes:
        data["t_test"] = t_test_two_sample(
            WeightedSample.binary(r_a, pairs), WeightedSample.binary(r_b, pairs)
        ).to_dict()
    if args.format == "csv":
        rows = [
            {"cv": " ".join(m["cv"]), "size_a": m["size_a"], "size_b": m["size_b"], "S": m["S"],
             "w_a": m["w_a"]["exact"], "w_b": m["w_b"]["exact"],
             "deaths_a": m["deaths_a"]["exact"], "deaths_b": m["deaths_b"]["exact"]}
            for m in data["matches"]
        ]
    else:
        p = data.get("t_test", {}).get("p_value")
        row = _result_row(f"Min-weighted DBSeM ({pairs} pairs)", r_a, r_b, pairs)
        row["p-value"] = "" if p is None else f"{p:.5f}"
        rows = [row]
    if args.figure:
        figures.cluster_sizes(data["matches"], args.figure)
    return Report(data, rows, "Min-weighted DBSeM")


def cmd_oracle(args, cohort) -> Report:
    exp = enumerate_expectation(cohort, args.guard)
    res = dbsem(cohort).result
    data = exp.to_dict()
    data["dbsem"] = {"r_a": rational(res.r_a), "r_b": rational(res.r_b)}
    data["agrees_with_dbsem"] = exp.feasible and (exp.e_a, exp.e_b) == (res.r_a, res.r_b)
    return Report(data, title="Enumerated expectation")


def cmd_stats(args) -> Report:
    if args.test == "chi2":
        rep = chi_square_2x2(args.deaths_a, args.n_a, args.deaths_b, args.n_b)
    else:
        rep = t_test_two_sample(
            WeightedSample.binary(args.deaths_a, args.n_a), WeightedSample.binary(args.deaths_b, args.n_b)
        )
    d = rep.to_dict()
    rows = [{"test": rep.test, "statistic": f"{rep.statistic:.6g}", "df": f"{rep.df:.6g}",
             "p-value": _fmt_p(rep.p_value)}]
    return Report(d, rows, "Hypothesis test")


def cmd_pitfall(args, cohort) -> Report:
    which = ("sort-order", "randomness", "incomplete", "collision") if args.kind == "all" else (args.kind,)
    data: dict = {}
    rows: list[dict] = []
    for kind in which:
        if kind == "sort-order":
            key = SortKey.parse(args.sort_key) if args.sort_key else None
            d = pitfalls.sort_order(cohort, key)
            for run in d["greedy"]:
                rows.append(_result_row(f"greedy, {run['label']}", Fraction(run["deaths_a"]["exact"]),
                                        Fraction(run["deaths_b"]["exact"]), run["pairs"]))
            rows.append(_result_row("DBSeM (any order)", Fraction(d["dbsem"]["r_a"]["exact"]),
                                    Fraction(d["dbsem"]["r_b"]["exact"]), d["dbsem"]["matched_pairs_total"]))
            if args.figure:
                figures.envelope(
                    [{"label": r["result"], "deaths_a": float(r["A count"]), "deaths_b": float(r["B count"])}
                     for r in rows[-3:]],
                    args.figure,
                )
        elif kind == "randomness":
            d = pitfalls.randomness(cohort, seeds=tuple(range(args.seed or 1, (args.seed or 1) + 4)))
            for run in d["greedy"]:
                rows.append(_result_row(f"greedy, {run['label']}", Fraction(run["deaths_a"]["exact"]),
                                        Fraction(run["deaths_b"]["exact"]), run["pairs"]))
        elif kind == "incomplete":
            d = pitfalls.incomplete(cohort)
            rows.append({"result": "greedy usage", "A count": d["greedy_pairs"],
                         "A %": _pct(Fraction(d["greedy_usage_a"]["exact"])), "B count": d["greedy_pairs"],
                         "B %": _pct(Fraction(d["greedy_usage_b"]["exact"])), "p-value": ""})
        else:
            model = None
            if args.coefficients:
                values = [float(v) for v in args.coefficients.split(",")]
                model = PropensityModel.from_coefficients(values[0], values[1:])
                if model.dimension != cohort.dimension:
                    raise UsageError(f"--coefficients needs intercept plus {cohort.dimension} slopes")
            d = pitfalls.collision(cohort, model, args.epsilon)
            rows.append({"result": "score vs covariate pairs", "A count": d["score_pairs"], "A %": "",
                         "B count": d["covariate_pairs"], "B %": "", "p-value": ""})
        data[kind] = d
    return Report(data, rows, "Exact PSM pitfalls")


def cmd_synth(args) -> Report:
    with open(args.spec, encoding="utf-8") as fh:
        spec = json.load(fh)
    if args.seed is not None:
        spec["seed"] = args.seed
    cohort = synth_cohort(spec)
    text = serialize_cohort(cohort)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return Report({"rows": len(cohort), "a": cohort.a, "b": cohort.b, "cohort": text, "out": args.out},
                  title="synthetic cohort")


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="balmatch", description="Deterministic exact statistical matching")
    parser.add_argument("--version", action="version", version=f"balmatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, cohort=True):
        if cohort:
            p.add_argument("input", help="cohort file (id,group,outcome,cv_1..cv_s)")
            p.add_argument("--precision", type=int, default=None, help="covariate decimal places")
        p.add_argument("--format", choices=("json", "csv", "table"), default=None)
        return p

    p = common(sub.add_parser("fit", help="fit the logistic propensity model"))
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--out", help="write model JSON here")

    p = common(sub.add_parser("psm", help="exact 1:1 PSM (greedy or with replacement)"))
    p.add_argument("--mode", default=None, help="greedy (default) or replacement")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--equality", choices=("covariate", "ps"), default="covariate")
    p.add_argument("--model", help="model JSON for --equality ps (fitted if absent)")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--out", help="write a_id,b_id pairs here plus a .json sidecar")

    p = common(sub.add_parser("extreme", help="best/worst case exact matchings"))
    p.add_argument("--mode", default=None, help="all (default) or one of " + ", ".join(EXTREME_MODES))
    p.add_argument("--figure", help="write a bar chart (png/pdf/svg)")

    p = common(sub.add_parser("bootstrap", help="uniformly bootstrapped exact PSM"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--figure", help="write the running-mean trace")

    p = common(sub.add_parser("dbsem", help="min-weighted DBSeM"))
    p.add_argument("--method", choices=("indexed", "quadratic"), default="indexed")
    p.add_argument("--members", action="store_true", help="list member ids per cluster")
    p.add_argument("--figure", help="write a cluster-size scatter plot")

    p = common(sub.add_parser("oracle", help="enumerated expectation vs DBSeM"))
    p.add_argument("--guard", type=int, default=None)

    p = common(sub.add_parser("stats", help="chi-square or t-test from counts"), cohort=False)
    p.add_argument("test", choices=("chi2", "t"))
    p.add_argument("deaths_a", type=float)
    p.add_argument("n_a", type=float)
    p.add_argument("deaths_b", type=float)
    p.add_argument("n_b", type=float)

    p = sub.add_parser("pitfall", help="demonstrate PSM pitfalls")
    p.add_argument("kind", choices=("sort-order", "randomness", "incomplete", "collision", "all"))
    common(p)
    p.add_argument("--sort-key", help="second order for sort-order, e.g. cv_1:desc (default: reversed rows)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--coefficients", help="force intercept,b1,..,bs instead of fitting")
    p.add_argument("--epsilon", type=float, default=1e-12)
    p.add_argument("--figure", help="write a bar chart for the sort-order demo")

    p = common(sub.add_parser("synth", help="generate a synthetic cohort"), cohort=False)
    p.add_argument("spec", help="JSON: {clusters: [...], noise, seed, precision}")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="write the cohort here instead of stdout")
    return parser


def _apply_env(args, environ) -> None:
    for name, conv in _ENV_FLAGS.items():
        if not hasattr(args, name) or getattr(args, name) is not None:
            continue
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            try:
                setattr(args, name, conv(raw))
            except ValueError:
                raise UsageError(f"{ENV_PREFIX}{name.upper()}={raw!r} is not a valid {name}") from None
        elif name in _BUILTIN:
            setattr(args, name, _BUILTIN[name])
    if args.format not in ("json", "csv", "table"):
        raise UsageError(f"unknown format {args.format!r}")


_HANDLERS = {
    "fit": cmd_fit,
    "psm": cmd_psm,
    "extreme": cmd_extreme,
    "bootstrap": cmd_bootstrap,
    "dbsem": cmd_dbsem,
    "oracle": cmd_oracle,
    "pitfall": cmd_pitfall,
}
_UNRECORDED = {"input", "out", "figure", "spec", "command"}


def run(argv=None, stdout=None, stderr=None, environ=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    environ = os.environ if environ is None else environ
    try:
        args = build_parser().parse_args(argv)
        _apply_env(args, environ)
        digest = None
        if args.command == "stats":
            report = cmd_stats(args)
        elif args.command == "synth":
            report = cmd_synth(args)
            if not args.out:
                stdout.write(report.data["cohort"])
                return 0
        else:
            raw, cohort = _read_input(args)
            digest = hashlib.sha256(raw).hexdigest()
            report = _HANDLERS[args.command](args, cohort)
        flags = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
        provenance = {
            "tool": "balmatch",
            "version": __version__,
            "command": args.command,
            "flags": flags,
            "input_sha256": digest,
            "seed": getattr(args, "seed", None),
        }
        stdout.write(_render(report, args.format, provenance))
        return 0
    except (UsageError, CohortError, SynthError, ValueError, OSError, json.JSONDecodeError) as exc:
        stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    except Exception as exc:  # noqa: BLE001
        stderr.write(json.dumps({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}) + "\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
