"""Command-line front end.

    covara moduli  --doc D                  covering / Lipschitz-like estimates at (xbar, ybar, pbar)
    covara solve   --doc D [--p 0.1,0.2]    one coincidence / generalized-equation solve
    covara implicit --doc D [--p ...]       solve g(x, p) = 0 near xbar
    covara sweep   --doc D                  selection table and mu grid over the sweep section
    covara certify --doc D                  stability verdicts for the optimal value function
    covara corpus list | run [NAME ...]     built-in instances with expected values

Exit codes: 0 success, 1 failed check or solver failure, 2 unreadable or invalid document.
"""
from __future__ import annotations

import argparse
import sys
from typing import Optional

import numpy as np

from . import corpus as corpus_mod
from .coincidence import solve_coincidence, solve_family
from .document import ProblemDocument, load_document
from .errors import CovaraError, ParseError, ValidationError
from .gensolve import beta, solve_generalized_equation, solve_implicit, theta_bound
from .marginal import certify_all, evaluate_mu, feasible_set_sample
from .moduli import alpha_hat, alpha_hat_semilocal, alpha_point, lipschitz_like_estimate
from .reports import dump_csv, dump_json, write_report

EXIT_OK, EXIT_FAILED, EXIT_DOCUMENT = 0, 1, 2


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covara", description="Covering-based solvers and stability certificates.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, doc=True):
        if doc:
            p.add_argument("--doc", required=True, help="problem document (JSON)")
        p.add_argument("--seed", type=_seed, help="override the schedule seed")
        p.add_argument("--out", help="directory for report files")
        p.add_argument("--format", choices=("csv", "json"), help="report format")

    for name in ("moduli", "sweep", "certify"):
        common(sub.add_parser(name))
    for name in ("solve", "implicit"):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--p", type=_floats, help="parameter, comma-separated (default pbar)")
    c = sub.add_parser("corpus")
    csub = c.add_subparsers(dest="action", required=True)
    csub.add_parser("list")
    run = csub.add_parser("run")
    run.add_argument("names", nargs="*", help="entries to run (default all)")
    common(run, doc=False)
    return parser


class _Context:
    def __init__(self, args, doc: Optional[ProblemDocument]):
        self.args = args
        self.doc = doc
        out_cfg = doc.output if doc is not None else None
        self.out = getattr(args, "out", None) or (out_cfg.dir if out_cfg is not None else None)
        self.format = getattr(args, "format", None) or (out_cfg.format if out_cfg is not None else "json")
        self.schedule = doc.sampling_schedule(getattr(args, "seed", None)) if doc is not None else None

    def emit(self, stem: str, record: dict, table: Optional[tuple] = None) -> None:
        """Print and optionally write a report; CSV needs a (header, rows) table."""
        if self.format == "csv" and table is not None:
            text, ext = dump_csv(*table), "csv"
        else:
            text, ext = dump_json(record), "json"
        sys.stdout.write(text)
        if self.out:
            write_report(self.out, f"{stem}.{ext}", text)


def _guard(fn):
    try:
        return fn(), None
    except CovaraError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _estimate(fn) -> dict:
    est, err = _guard(fn)
    return {"error": err} if err else est.to_dict()


def cmd_moduli(ctx: _Context) -> int:
    doc, sch = ctx.doc, ctx.schedule
    F, xbar, pbar = doc.F(), doc.xbar(), doc.pbar()
    ybar = doc.ybar()
    record = {"xbar": xbar, "ybar": ybar, "pbar": pbar, "schedule": sch.to_dict(), "estimates": {}}
    est = record["estimates"]
    est["alpha_hat"] = _estimate(lambda: alpha_hat(F, xbar, ybar, sch))
    est["alpha_hat_semilocal"] = _estimate(lambda: alpha_hat_semilocal(F, xbar, sch))
    if F.single_valued:
        est["alpha_point"] = _estimate(lambda: alpha_point(F, xbar))
        est["beta"] = _estimate(lambda: beta(F, xbar, sch))
    if doc.maps.g is not None or doc.maps.G is not None:
        G = doc.G()
        r = sch.eta_sequence[0]
        est["lipschitz_like"] = _estimate(lambda: lipschitz_like_estimate(G, pbar, xbar, r, ybar, r, sch))
    if doc.maps.g is not None:
        theta, err = _guard(lambda: theta_bound(doc.g(), xbar, pbar, schedule=sch))
        est["theta"] = {"error": err} if err else theta.to_dict()
    rows = []
    for kind, e in sorted(est.items()):
        rows.append([kind, e.get("value", e.get("inf_theta")), e.get("converged"), e.get("error", "")])
    ctx.emit("moduli", record, (["kind", "value", "converged", "error"], rows))
    return EXIT_OK


def _param(ctx: _Context) -> np.ndarray:
    p = ctx.args.p if ctx.args.p is not None else ctx.doc.pbar()
    if p.size != ctx.doc.dim_p:
        raise ValidationError(f"--p has {p.size} entries, the document has dim_p = {ctx.doc.dim_p}", "--p")
    return p


def _result_table(d: dict) -> tuple:
    header = [f"sigma{i}" for i in range(len(d["sigma"]))] + ["residual", "iterations", "bound", "bound_satisfied"]
    row = list(d["sigma"]) + [d.get("residual", d.get("residual_norm")), d["iterations"], d["bound"], d["bound_satisfied"]]
    return header, [row]


def cmd_solve(ctx: _Context) -> int:
    doc, p = ctx.doc, _param(ctx)
    cfg = doc.solver_config()
    if doc.maps.G is not None:
        res = solve_coincidence(doc.F(), doc.G(), doc.xbar(), doc.ybar(), p, cfg, doc.pbar(), ctx.schedule)
    else:
        res = solve_generalized_equation(doc.F(), doc.g(), doc.xbar(), p, cfg, doc.pbar(), ctx.schedule)
    record = {"p": p, "seed": ctx.schedule.seed, "result": res.to_dict()}
    ctx.emit("solve", record, _result_table(record["result"]))
    return EXIT_OK if res.bound_satisfied else EXIT_FAILED


def cmd_implicit(ctx: _Context) -> int:
    doc, p = ctx.doc, _param(ctx)
    res = solve_implicit(doc.g(), doc.xbar(), doc.pbar(), p, doc.solver_config(), ctx.schedule)
    record = {"p": p, "seed": ctx.schedule.seed, "result": res.to_dict()}
    ctx.emit("implicit", record, _result_table(record["result"]))
    return EXIT_OK if res.bound_satisfied else EXIT_FAILED


def cmd_sweep(ctx: _Context) -> int:
    doc = ctx.doc
    grid = doc.sweep_points()
    record = {"seed": ctx.schedule.seed}
    table = None
    if doc.maps.F is not None and (doc.maps.g is not None or doc.maps.G is not None):
        sel = solve_family(doc.F(), doc.G(), doc.xbar(), doc.ybar(), doc.pbar(), grid, doc.solver_config(), ctx.schedule)
        header, rows = sel.rows()
        record["selection"] = {"header": header, "rows": rows, "config": sel.config.to_dict()}
        table = (header, rows)
    if doc.maps.phi is not None and doc.problem.domain_box is not None:
        inst = doc.instance()
        res = doc.sweep.resolution
        header = [f"p{i}" for i in range(doc.dim_p)] + ["mu", "feasible_count"]
        rows = [list(p) + [evaluate_mu(inst, p, res), len(feasible_set_sample(inst, p, res))] for p in grid]
        record["mu_grid"] = {"header": header, "rows": rows}
        if table is None:
            table = (header, rows)
        elif ctx.format == "csv" and ctx.out:
            write_report(ctx.out, "mu_grid.csv", dump_csv(header, rows))
    if table is None:
        raise ValidationError("sweep needs F with g or G, or phi with a domain_box", "maps")
    ctx.emit("sweep", record, table)
    return EXIT_OK


def cmd_certify(ctx: _Context) -> int:
    doc = ctx.doc
    grid = doc.sweep_points() if doc.sweep is not None else None
    resolution = doc.sweep.resolution if doc.sweep is not None else None
    rep = certify_all(doc.instance(), ctx.schedule, grid, resolution)
    record = {"seed": ctx.schedule.seed, "report": rep.to_dict()}
    sys.stderr.write(rep.summary() + "\n")
    rows = [[k, v] for k, v in rep.verdicts.items()]
    ctx.emit("certify", record, (["property", "verdict"], rows))
    return EXIT_OK


def cmd_corpus(ctx: _Context) -> int:
    args = ctx.args
    if args.action == "list":
        for name, entry in corpus_mod.CORPUS.items():
            sys.stdout.write(f"{name:<18} {entry.description}\n")
        return EXIT_OK
    names = args.names or list(corpus_mod.CORPUS)
    entries = [corpus_mod.get_entry(n) for n in names]
    reports = [e.run(args.seed) for e in entries]
    for rep in reports:
        for c in rep["checks"]:
            mark = "PASS" if c["passed"] else "FAIL"
            sys.stderr.write(f"{mark} {rep['entry']}: {c['quantity']} = {c['value']!r} ({c['relation']} {c['expected']!r})\n")
        if rep["error"]:
            sys.stderr.write(f"FAIL {rep['entry']}: {rep['error']}\n")
    header = ["entry", "quantity", "value", "expected", "tolerance", "relation", "passed", "provenance"]
    rows = [
        [r["entry"], c["quantity"], c["value"], c["expected"], c["tolerance"], c["relation"], c["passed"], c["provenance"]]
        for r in reports
        for c in r["checks"]
    ]
    ctx.emit("corpus", {"entries": reports}, (header, rows))
    return EXIT_OK if all(r["passed"] for r in reports) else EXIT_FAILED


COMMANDS = {
    "moduli": cmd_moduli,
    "solve": cmd_solve,
    "implicit": cmd_implicit,
    "sweep": cmd_sweep,
    "certify": cmd_certify,
    "corpus": cmd_corpus,
}


def _diagnose(exc: CovaraError) -> None:
    sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
    if exc.assumption:
        sys.stderr.write(f"assumption failed: {exc.assumption}\n")


def run_command(argv) -> int:
    """Run one subcommand; returns the exit code."""
    try:
        args = build_parser().parse_args(list(argv))
    except SystemExit as exc:
        return EXIT_DOCUMENT if exc.code else EXIT_OK
    try:
        doc = load_document(args.doc) if getattr(args, "doc", None) else None
    except (ParseError, ValidationError) as exc:
        _diagnose(exc)
        return EXIT_DOCUMENT
    try:
        return COMMANDS[args.command](_Context(args, doc))
    except ValidationError as exc:
        _diagnose(exc)
        return EXIT_DOCUMENT
    except CovaraError as exc:
        _diagnose(exc)
        return EXIT_FAILED
    except KeyError as exc:
        sys.stderr.write(f"error: {exc.args[0]}\n")
        return EXIT_DOCUMENT


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
