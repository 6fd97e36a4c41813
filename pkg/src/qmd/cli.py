"""Command-line driver: ``qmd <command> [options]``.

Exit codes: 0 success, 1 a checked property failed, 2 bad input, 3 size limit.
Floats are written with 12 significant digits; identical inputs and seed give
byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import channels, extremal, infomeasures, quantum, separation, typicality
from .errors import QmdError, SizeLimitError
from .numerics import matrix_from_json, matrix_to_json

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_SIZE = 0, 1, 2, 3
CSV_COMMANDS = ("separate", "chernoff")


class InputError(Exception):
    pass


# --- output -----------------------------------------------------------------------------


def _round(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.12g}")
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round(v) for v in obj]
    return obj


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def _config(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, report: dict, rows: list | None = None, columns: list | None = None) -> None:
    """Write ``report`` as JSON, or ``rows`` as CSV (falling back to the
    scalar entries of ``report`` as key,value rows)."""
    if args.format == "csv":
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(_round(_config(args)), sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        if rows is None:
            columns = ["key", "value"]
            rows = [[k, v] for k, v in report.items() if not isinstance(v, (dict, list, tuple))]
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(v) for v in r])
        text = buf.getvalue()
    else:
        text = json.dumps(_round({"config": _config(args), **report}), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- input ------------------------------------------------------------------------------


def _load_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc


def _load_state(path: str | None, default=None) -> np.ndarray:
    if path is None:
        return default
    obj = _load_json(path)
    if isinstance(obj, dict) and "state" in obj:
        obj = obj["state"]
    return quantum.density(matrix_from_json(obj))


def _load_povm(path: str | None, default=None) -> quantum.Povm:
    if path is None:
        return default
    return quantum.Povm.from_json(_load_json(path))


def _int_range(text: str) -> list:
    """``"3-7"`` or ``"3,5,7"`` or ``"4"``."""
    try:
        if "-" in text:
            lo, hi = (int(t) for t in text.split("-"))
            return list(range(lo, hi + 1))
        return [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise InputError(f"cannot parse integer range {text!r}") from exc


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise InputError(f"cannot parse number list {text!r}") from exc


# --- commands ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    rho = _load_state(args.state)
    a = _load_povm(args.povm)
    if a.dim != rho.shape[0]:
        raise InputError("state and POVM dimensions differ")
    ens = quantum.induced_ensemble(rho, a)
    ext = extremal.is_extremal(a)
    report = {
        "dim": a.dim,
        "outcomes": len(a),
        "entropy_rho": infomeasures.von_neumann_entropy(rho),
        "entropy_lambda": infomeasures.shannon_entropy(ens.probs),
        "conditional_entropy": infomeasures.conditional_entropy(ens),
        "entropy_defect": infomeasures.entropy_defect(ens),
        "extremal": ext.extremal,
        "perturbation_dim": ext.null_dim,
        "induced_ensemble": ens.to_json(),
    }
    _emit(args, report)
    return EXIT_OK


def _separation_params(args, l: int, seed: int) -> separation.SeparationParams:
    return separation.SeparationParams(
        l=l,
        epsilon=args.epsilon,
        delta=args.delta,
        margin_c1=args.margin_c1,
        margin_c2=args.margin_c2,
        seed=seed,
    )


def cmd_separate(args) -> int:
    rho = _load_state(args.state, np.eye(2) / 2)
    a = _load_povm(args.povm, quantum.chrysler_povm())
    columns = ["l", "delta", "M", "N", "cm_error", "cp_error_max", "bound_error", "seed"]
    rows, runs, failed = [], [], False
    for l in _int_range(args.l):
        for seed in range(args.seed, args.seed + args.seeds):
            res = separation.build_separation(rho, a, _separation_params(args, l, seed))
            rng = np.random.default_rng(np.random.SeedSequence([seed, l, 1]))
            cp = separation.sampled_cp_errors(res, args.trials, rng) if args.trials else np.zeros(1)
            p = res.params
            cp_max = float(cp.max())
            failed |= cp_max > res.cm_error + 1e-9
            rows.append([l, p.delta, p.M, p.N, res.cm_error, cp_max, res.bound_error, seed])
            runs.append(dict(zip(columns, rows[-1]), diagnostics={
                k: v for k, v in res.diagnostics.items() if not isinstance(v, list)}))
    _emit(args, {"columns": columns, "runs": runs}, rows, columns)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_channel(args) -> int:
    obj = _load_json(args.channel)
    ch = channels.KrausChannel.from_json(obj)
    rho = _load_state(args.state, np.eye(ch.in_dim) / ch.in_dim)
    if rho.shape[0] != ch.in_dim:
        raise InputError("state does not match the channel input dimension")
    s_e = channels.entropy_exchange(ch, rho)
    canon = channels.canonical_kraus(ch, rho)
    sig = channels.sigma_search(ch, rho, restarts=args.trials or 4, seed=args.seed)
    report = {
        "entropy_exchange": s_e,
        "canonical_entropy_lambda": infomeasures.shannon_entropy(channels.outcome_distribution(canon, rho)),
        "representation_information": channels.representation_information(ch, rho),
        "sigma_upper_bound": sig.value,
        "sigma_max_seen": sig.max_seen,
        "sigma_restarts": sig.restarts,
    }
    failed = sig.value > s_e + 1e-9
    if args.l:
        dec = channels.decompose_channel(ch, rho, _separation_params(args, args.l, args.seed))
        errs = dec.completeness_errors()
        report.update({
            "l": args.l,
            "M": dec.M,
            "N": dec.N,
            "max_kraus_operators": max(dec.kraus_counts()),
            "max_completeness_error": max(errs),
            "co_star_error": dec.co_star_error,
            "string_bound": dec.string_bound,
            "estimate": dec.estimate,
            "cm_error": dec.separation.cm_error,
        })
        failed |= max(errs) > 1e-8 or dec.co_star_error > dec.string_bound + 1e-9
    _emit(args, report)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_chrysler(args) -> int:
    rep = extremal.chrysler_benchmark()
    ens = quantum.induced_ensemble(np.eye(2) / 2, quantum.chrysler_povm())
    report = rep.to_json()
    report["entropy_defect"] = infomeasures.entropy_defect(ens)
    rows = None
    columns = ["t", "alpha", "beta", "outcome_alpha", "outcome_beta_1", "outcome_beta_2", "weight", "rate"]
    if args.format == "csv":
        rows = [[t, rep.alpha, rep.beta, t, (t + 2) % 5, (t + 3) % 5, 0.2, rep.component_rates[t]]
                for t in range(5)]
    _emit(args, report, rows, columns)
    ok = rep.reconstruction_error < 1e-9 and rep.all_extremal
    return EXIT_OK if ok else EXIT_FAIL


def cmd_chernoff(args) -> int:
    columns = ["dim_k", "M", "eta", "s", "failure_rate", "bound", "stderr", "holds"]
    rows = []
    trials = args.trials or 10_000
    cell = 0
    for dk in _int_range(args.dim_k):
        for m in _int_range(args.M):
            for eta in _float_list(args.eta):
                for s in _float_list(args.s):
                    r = separation.chernoff_check(dk, m, eta, s, trials, seed=args.seed * 1000 + cell)
                    cell += 1
                    rows.append([dk, m, eta, s, r.failure_rate, r.bound, r.stderr, r.holds])
    _emit(args, {"columns": columns, "cells": [dict(zip(columns, r)) for r in rows]}, rows, columns)
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_FAIL


def cmd_purify(args) -> int:
    rho = _load_state(args.state)
    d = rho.shape[0]
    rng = np.random.default_rng(args.seed)
    sigma = _load_state(args.sigma, quantum.random_density(d, rng))
    if sigma.shape != rho.shape:
        raise InputError("states have different dimensions")
    vec = quantum.canonical_purification(rho)
    margins = quantum.appendix_a_report(rho, sigma)
    report = {
        "purification": matrix_to_json(vec.reshape(-1, 1)),
        "canonical_fidelity": quantum.canonical_fidelity(rho, sigma).value,
        "uhlmann_fidelity": quantum.uhlmann_fidelity(rho, sigma),
        "trace_distance": quantum.trace_distance(rho, sigma),
        **{f"margin_{k}": v for k, v in margins.items()},
    }
    ok = margins["fid_identity"] <= 1e-8 and all(v >= -1e-9 for k, v in margins.items() if k != "fid_identity")
    _emit(args, report)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_holevo(args) -> int:
    trials = args.trials or 1000
    rng = np.random.default_rng(args.seed)
    worst, violations = -math.inf, 0
    for _ in range(trials):
        d = int(rng.integers(2, 5))
        ens = quantum.random_ensemble(d, int(rng.integers(2, 7)), rng)
        s = quantum.random_povm(d, int(rng.integers(2, 7)), rng)
        chk = infomeasures.holevo_check(ens, s)
        worst = max(worst, chk.lhs - chk.rhs)
        violations += not chk.holds
    _emit(args, {"trials": trials, "violations": violations, "max_excess": worst})
    return EXIT_OK if violations == 0 else EXIT_FAIL


def cmd_typicality(args) -> int:
    rho = _load_state(args.state, np.diag([0.8, 0.2]).astype(complex))
    a = _load_povm(args.povm, quantum.computational_pvm(rho.shape[0]))
    ens = quantum.induced_ensemble(rho, a)
    l = int(args.l or 8)
    delta = 2.0 if args.delta is None else args.delta
    rep = typicality.check_typicality_bounds(rho, ens, l, delta, rng=np.random.default_rng(args.seed))
    columns = ["name", "lhs", "rhs", "relation", "margin", "holds"]
    rows = [[e.name, e.lhs, e.rhs, e.relation, e.margin, e.holds] for e in rep.entries]
    report = {"khat": rep.khat, "entries": [dict(zip(columns, r)) for r in rows]}
    _emit(args, report, rows, columns)
    ok = all(e.holds for e in rep.entries if e.name in typicality.PROBABILITY_BOUNDS)
    return EXIT_OK if ok else EXIT_FAIL


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="output format (default: csv for sweeps, json otherwise)")

    construction = argparse.ArgumentParser(add_help=False)
    construction.add_argument("--delta", type=float, default=None)
    construction.add_argument("--epsilon", type=float, default=separation.DEFAULT_EPSILON)
    construction.add_argument("--margin-c1", type=float, default=separation.DEFAULT_C1)
    construction.add_argument("--margin-c2", type=float, default=separation.DEFAULT_C2)

    parser = argparse.ArgumentParser(prog="qmd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="entropies and extremality of a (state, POVM) pair")
    p.add_argument("state")
    p.add_argument("povm")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("separate", parents=[common, construction], help="sweep the separation construction")
    p.add_argument("state", nargs="?", help="state JSON (default: maximally mixed qubit)")
    p.add_argument("povm", nargs="?", help="POVM JSON (default: pentagon POVM)")
    p.add_argument("--l", default="3-7", help="block lengths, e.g. 3-7 or 3,5")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds from --seed")
    p.add_argument("--trials", type=int, default=20, help="sampled sources per run")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("channel", parents=[common, construction], help="entropy exchange and block decomposition")
    p.add_argument("channel")
    p.add_argument("state", nargs="?")
    p.add_argument("--l", type=int, default=None, help="block length for the decomposition")
    p.add_argument("--trials", type=int, default=None, help="random restarts of the unitary search")
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("chrysler", parents=[common], help="pentagon benchmark")
    p.set_defaults(func=cmd_chrysler)

    p = sub.add_parser("chernoff", parents=[common], help="matrix Chernoff grid")
    p.add_argument("--dim-k", default="1,2,4")
    p.add_argument("--M", default="50,200,800")
    p.add_argument("--eta", default="0.1,0.3")
    p.add_argument("--s", default="0.2,0.5")
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_chernoff)

    p = sub.add_parser("purify", parents=[common], help="canonical purification and fidelity bounds")
    p.add_argument("state")
    p.add_argument("sigma", nargs="?", help="second state (default: random, from --seed)")
    p.set_defaults(func=cmd_purify)

    p = sub.add_parser("holevo", parents=[common], help="random check of the Holevo bound")
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_holevo)

    p = sub.add_parser("typicality", parents=[common], help="typical-subspace bounds at finite l")
    p.add_argument("state", nargs="?")
    p.add_argument("povm", nargs="?")
    p.add_argument("--l", type=int, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.set_defaults(func=cmd_typicality)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = "csv" if args.command in CSV_COMMANDS else "json"
    try:
        return args.func(args)
    except SizeLimitError as exc:
        print(f"qmd: size limit: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except (InputError, QmdError) as exc:
        print(f"qmd: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
