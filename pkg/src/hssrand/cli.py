"""Command-line front end.

Every option can also be set through an environment variable named
``HSSRAND_<OPTION>`` (upper case, dashes as underscores), e.g.
``HSSRAND_RTOL=1e-8``.

Exit codes: 0 success, 2 usage error, 3 maximum rank reached,
4 verification against the dense matrix failed.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import bounds, cost
from .compression import (
    STRATEGIES,
    CompressionConfig,
    MaxRankReached,
    compress,
    compress_known_rank,
)
from .dense import RngStream
from .hss import MAX_DENSE_N, HssMatrix
from .operators import ExplicitDense, MatrixSource, ParamKernel, ToeplitzKernel, load_dense
from .tree import DEFAULT_LEAF_SIZE, build_balanced

EXIT_MAX_RANK = 3
EXIT_VERIFY = 4
VERIFY_LIMIT = 4096
# verification passes within this factor of the requested tolerances
VERIFY_SLACK = 100.0

COMPRESS_CSV_COLUMNS = (
    "kernel", "n", "strategy", "rtol", "atol", "hss_rank", "mem_bytes",
    "rel_error", "abs_error", "adapt_steps", "restarts", "columns",
    "columns_total", "flops_total",
)


def opt(*decls, **kw):
    """click.option with an ``HSSRAND_`` environment variable attached."""
    long = next(d for d in decls if d.startswith("--"))
    name = long[2:].split("/")[0]
    kw.setdefault("envvar", "HSSRAND_" + name.upper().replace("-", "_"))
    kw.setdefault("show_envvar", True)
    return click.option(*decls, **kw)


def float_list(_ctx, _param, value):
    if value is None or isinstance(value, (list, tuple)):
        return value
    try:
        return [float(x) for x in str(value).split(",") if x.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def int_list(_ctx, _param, value):
    if value is None or isinstance(value, (list, tuple)):
        return value
    try:
        return [int(x) for x in str(value).split(",") if x.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def kernel_options(f):
    decorators = [
        opt("--kernel", default="param", show_default=True,
            help="param, toeplitz or dense:<file> (.csv or binary)"),
        opt("--n", type=click.IntRange(1), default=1000, show_default=True),
        opt("--rank", type=click.IntRange(0), default=100, show_default=True),
        opt("--alpha", type=float, default=1.0, show_default=True),
        opt("--beta", type=float, default=1.0, show_default=True),
        opt("--decay/--no-decay", default=False, show_default=True),
        opt("--leaf", type=click.IntRange(1), default=DEFAULT_LEAF_SIZE, show_default=True),
        opt("--d0", type=click.IntRange(1), default=128, show_default=True),
        opt("--dd", type=click.IntRange(1), default=64, show_default=True),
        opt("--p", type=click.IntRange(0), default=10, show_default=True),
        opt("--dmax", type=click.IntRange(1), default=None, help="default min(n, 5000)"),
        opt("--seed", type=int, default=0, show_default=True),
        opt("--threads", type=click.IntRange(1), default=1, show_default=True),
    ]
    for d in reversed(decorators):
        f = d(f)
    return f


def make_source(kernel: str, n: int, rank: int, alpha: float, beta: float, decay: bool, seed: int) -> MatrixSource:
    if kernel == "param":
        if rank > n:
            raise click.BadParameter("rank must not exceed n", param_hint="--rank")
        return ParamKernel(n, rank, alpha=alpha, beta=beta, decay=decay, seed=seed)
    if kernel == "toeplitz":
        return ToeplitzKernel(n)
    if kernel.startswith("dense:"):
        path = kernel[len("dense:"):]
        try:
            return ExplicitDense(load_dense(path))
        except (OSError, ValueError) as exc:
            raise click.BadParameter(str(exc), param_hint="--kernel") from exc
    raise click.BadParameter(f"unknown kernel {kernel!r}", param_hint="--kernel")


def make_config(rtol, atol, d0, dd, p, dmax, strategy, seed, threads) -> CompressionConfig:
    try:
        return CompressionConfig(
            eps_rel=rtol, eps_abs=atol, d0=d0, delta_d=dd, d_max=dmax,
            strategy=strategy, p=p, seed=seed, threads=threads,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def measure(src: MatrixSource, H: HssMatrix) -> tuple[float, float]:
    A = src.dense()
    diff = float(np.linalg.norm(A - H.to_dense()))
    norm = float(np.linalg.norm(A))
    return (diff / norm if norm > 0 else diff), diff


def run_one(src, tree, cfg, verify: bool, known_d: int | None = None) -> dict:
    """Compress once and describe the outcome as a plain dict."""
    t0 = time.perf_counter()
    if cfg.strategy == "known-rank" and known_d is not None:
        H = compress_known_rank(src, tree, known_d, cfg)
    else:
        H = compress(src, tree, cfg)
    wall = time.perf_counter() - t0
    info = H.info
    out = {
        "hss_rank": H.hss_rank,
        "mem_bytes": H.mem_bytes,
        "per_level_ranks": H.stats()["per_level_ranks"],
        "rel_error": None,
        "abs_error": None,
        "adapt_steps": info.adapt_steps,
        "restarts": info.restarts,
        "columns": info.columns,
        "columns_total": info.columns_total,
        "flops": info.flops.as_dict(),
        "flops_total": info.flops.total,
    }
    if verify:
        out["rel_error"], out["abs_error"] = measure(src, H)
    out["_wall"] = {"total": wall, **{k: float(v) for k, v in sorted(info.flops.seconds.items())}}
    out["_hss"] = H
    return out


def public(rec: dict, timings: bool) -> dict:
    res = {k: v for k, v in rec.items() if not k.startswith("_")}
    if timings:
        res["wall_times"] = rec["_wall"]
    return res


def emit(text: str, output: str | None) -> None:
    if output in (None, "-"):
        click.echo(text, nl=not text.endswith("\n"))
    else:
        Path(output).write_text(text)


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    return buf.getvalue()


def should_verify(verify: str, n: int) -> bool:
    if verify == "off":
        return False
    if verify == "force":
        if n > MAX_DENSE_N:
            raise click.UsageError(f"cannot verify above n={MAX_DENSE_N}")
        return True
    return n <= VERIFY_LIMIT


def verification_ok(rec: dict, rtol: float, atol: float) -> bool:
    if rec["rel_error"] is None:
        return True
    return rec["rel_error"] <= VERIFY_SLACK * rtol or rec["abs_error"] <= VERIFY_SLACK * atol


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@opt("--log-level", default="WARNING", show_default=True,
     type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def main(log_level: str) -> None:
    """Adaptive randomized HSS compression."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("compress")
@kernel_options
@opt("--rtol", type=float, default=1e-6, show_default=True)
@opt("--atol", type=float, default=1e-6, show_default=True)
@opt("--strategy", type=click.Choice(STRATEGIES), default="incrementing", show_default=True)
@opt("--out", "out_format", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@opt("--output", "-o", default=None, help="file to write (default stdout)")
@opt("--verify", type=click.Choice(["auto", "off", "force"]), default="auto", show_default=True,
     help=f"compare against the dense matrix (auto: n <= {VERIFY_LIMIT})")
@opt("--no-verify", "no_verify", is_flag=True, default=False, help="same as --verify off")
@opt("--dump-tree", type=click.Path(dir_okay=False), default=None)
@opt("--dump-hss", type=click.Path(dir_okay=False), default=None)
@opt("--timings", is_flag=True, default=False, help="add wall times (breaks byte-identical output)")
def cmd_compress(kernel, n, rank, alpha, beta, decay, leaf, d0, dd, p, dmax, seed, threads,
                 rtol, atol, strategy, out_format, output, verify, no_verify, dump_tree,
                 dump_hss, timings):
    """Compress one matrix and report rank, memory, error and flops."""
    src = make_source(kernel, n, rank, alpha, beta, decay, seed)
    n = src.n
    cfg = make_config(rtol, atol, d0, dd, p, dmax, strategy, seed, threads)
    tree = build_balanced(n, leaf)
    if dump_tree:
        Path(dump_tree).write_text(tree.to_json())
    do_verify = should_verify("off" if no_verify else verify, n)
    try:
        rec = run_one(src, tree, cfg, do_verify)
    except MaxRankReached as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_MAX_RANK)
    if dump_hss:
        Path(dump_hss).write_text(rec["_hss"].to_json())
    report = {
        "config": {
            "kernel": kernel, "n": n, "rank": rank, "alpha": alpha, "beta": beta,
            "decay": decay, "leaf": leaf, "d0": d0, "dd": dd, "p": p,
            "dmax": cfg.max_columns(n), "rtol": rtol, "atol": atol,
            "strategy": strategy, "seed": seed,
        },
        **public(rec, timings),
        "verified": do_verify,
    }
    if out_format == "json":
        emit(json.dumps(report, indent=2) + "\n", output)
    else:
        row = {**report["config"], **report}
        cols = COMPRESS_CSV_COLUMNS + tuple(f"flops_{k}" for k in rec["flops"])
        row.update({f"flops_{k}": v for k, v in rec["flops"].items()})
        emit(to_csv(cols, [row]), output)
    if not verification_ok(rec, rtol, atol):
        click.echo(
            f"verification failed: rel_error={rec['rel_error']:.3e} abs_error={rec['abs_error']:.3e}",
            err=True,
        )
        sys.exit(EXIT_VERIFY)


ADAPT_COLUMNS = ("mode", "hss_rank", "adapt_steps", "columns", "columns_total",
                 "flops_sampling", "flops_total", "rel_error")


@main.command("adapt-compare")
@kernel_options
@opt("--rtol", type=float, default=1e-10, show_default=True)
@opt("--atol", type=float, default=1e-10, show_default=True)
@opt("--modes", default="known-rank,incrementing,hard-restart", show_default=True)
@opt("--known-d", type=click.IntRange(1), default=None,
     help="sample columns for known-rank (default: rank + p, or the incrementing rank + p with --decay)")
@opt("--out", "out_format", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@opt("--output", "-o", default=None)
@opt("--verify", type=click.Choice(["auto", "off", "force"]), default="auto", show_default=True)
def cmd_adapt_compare(kernel, n, rank, alpha, beta, decay, leaf, d0, dd, p, dmax, seed, threads,
                      rtol, atol, modes, known_d, out_format, output, verify):
    """Known-rank vs adaptive vs restart-from-scratch cost on one matrix."""
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    bad = [m for m in mode_list if m not in STRATEGIES]
    if bad:
        raise click.BadParameter(f"unknown modes {bad}", param_hint="--modes")
    src = make_source(kernel, n, rank, alpha, beta, decay, seed)
    tree = build_balanced(src.n, leaf)
    do_verify = should_verify(verify, src.n)
    # adaptive runs first: the known-rank default may depend on them
    order = sorted(mode_list, key=lambda m: m == "known-rank")
    recs = {}
    try:
        for mode in order:
            cfg = make_config(rtol, atol, d0, dd, p, dmax, mode, seed, threads)
            kd = None
            if mode == "known-rank":
                kd = known_d
                if kd is None:
                    if kernel == "param" and not decay:
                        kd = rank + p
                    elif "incrementing" in recs:
                        kd = recs["incrementing"]["hss_rank"] + p
                    else:
                        kd = d0 + p
            recs[mode] = run_one(src, tree, cfg, do_verify, known_d=kd)
    except MaxRankReached as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_MAX_RANK)
    rows = []
    for mode in mode_list:
        r = recs[mode]
        rows.append({
            "mode": mode, "hss_rank": r["hss_rank"], "adapt_steps": r["adapt_steps"],
            "columns": r["columns"], "columns_total": r["columns_total"],
            "flops_sampling": r["flops"]["sampling"], "flops_total": r["flops_total"],
            "rel_error": r["rel_error"],
        })
    samp = {r["mode"]: r["flops_sampling"] for r in rows}
    order_ok = None
    if {"known-rank", "incrementing", "hard-restart"} <= samp.keys():
        order_ok = samp["known-rank"] <= samp["incrementing"] <= samp["hard-restart"]
        if not order_ok:
            click.echo("warning: sampling flops not ordered known-rank <= incrementing <= hard-restart", err=True)
    if out_format == "json":
        emit(json.dumps({"rows": rows, "sampling_order_ok": order_ok}, indent=2) + "\n", output)
    else:
        emit(to_csv(ADAPT_COLUMNS, rows), output)


GRID_COLUMNS = ("criterion", "rtol", "atol", "rel_error", "hss_rank", "max_rank_reached")


@main.command("stopping-grid")
@kernel_options
@opt("--rtols", callback=float_list, default="1e-2,1e-6,1e-10,1e-14", show_default=True)
@opt("--atols", callback=float_list, default="1e-2,1e-6,1e-10,1e-14", show_default=True)
@opt("--hmt", is_flag=True, default=False, help="add the HMT absolute-criterion row")
@opt("--out", "out_format", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@opt("--output", "-o", default=None)
def cmd_stopping_grid(kernel, n, rank, alpha, beta, decay, leaf, d0, dd, p, dmax, seed, threads,
                      rtols, atols, hmt, out_format, output):
    """(error, rank) over a grid of relative and absolute tolerances."""
    src = make_source(kernel, n, rank, alpha, beta, decay, seed)
    if src.n > MAX_DENSE_N:
        raise click.UsageError(f"the grid needs the dense matrix; n must be <= {MAX_DENSE_N}")
    tree = build_balanced(src.n, leaf)
    cells = [("new", rt, at) for rt in rtols for at in atols]
    if hmt:
        cells += [("hmt", 0.0, at) for at in atols]
    rows = []
    for kind, rt, at in cells:
        strategy = "hmt" if kind == "hmt" else "incrementing"
        cfg = make_config(rt, at, d0, dd, p, dmax, strategy, seed, threads)
        try:
            rec = run_one(src, tree, cfg, True)
            rows.append({"criterion": kind, "rtol": rt, "atol": at, "rel_error": rec["rel_error"],
                         "hss_rank": rec["hss_rank"], "max_rank_reached": False})
        except MaxRankReached as exc:
            rows.append({"criterion": kind, "rtol": rt, "atol": at, "rel_error": None,
                         "hss_rank": exc.d, "max_rank_reached": True})
    diag = [r for r in rows if r["criterion"] == "new" and r["rtol"] == r["atol"]
            and r["rel_error"] is not None]
    diagonal_ok = all(r["rel_error"] <= VERIFY_SLACK * r["rtol"] for r in diag)
    if out_format == "json":
        emit(json.dumps({"rows": rows, "diagonal_ok": diagonal_ok}, indent=2) + "\n", output)
    else:
        emit(to_csv(GRID_COLUMNS, rows), output)


BOUNDS_COLUMNS = ("tau", "d", "bound", "empirical", "side", "bound_raw")


def read_spectrum(sigmas: list[float] | None, spectrum_file: str | None) -> bounds.Spectrum:
    if spectrum_file:
        text = Path(spectrum_file).read_text().replace(",", " ").split()
        values = [float(x) for x in text]
    elif sigmas:
        values = sigmas
    else:
        raise click.UsageError("give --sigmas or --spectrum-file")
    try:
        return bounds.Spectrum(sorted(values, reverse=True))
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--sigmas") from exc


@main.command("bounds")
@opt("--sigmas", callback=float_list, default=None, help="comma-separated singular values")
@opt("--spectrum-file", type=click.Path(exists=True, dir_okay=False), default=None)
@opt("--d", "ds", callback=int_list, default="10", show_default=True)
@opt("--tau", "taus", callback=float_list, default="0.5,2", show_default=True)
@opt("--trials", type=click.IntRange(0), default=100000, show_default=True,
     help="Monte Carlo draws per row (0 skips the empirical column)")
@opt("--seed", type=int, default=0, show_default=True)
@opt("--out", "out_format", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@opt("--output", "-o", default=None)
def cmd_bounds(sigmas, spectrum_file, ds, taus, trials, seed, out_format, output):
    """Chernoff tail bounds next to Monte Carlo frequencies.

    tau > 1 gives the upper tail, 0 <= tau < 1 the lower tail.
    """
    spec = read_spectrum(sigmas, spectrum_file)
    rng = RngStream(seed)
    rows = []
    for tau in taus:
        side = "upper" if tau > 1.0 else "lower"
        for d in ds:
            try:
                raw = bounds.tail_bound(spec, d, tau, side)
            except bounds.RankOne as exc:
                raise click.BadParameter(str(exc), param_hint="--sigmas") from exc
            except bounds.BadTau as exc:
                click.echo(f"skipping tau={tau}: {exc}", err=True)
                break
            emp = (bounds.mc_tail_probability(spec, d, tau, side, trials, rng)
                   if trials else None)
            rows.append({"tau": tau, "d": d, "bound": min(max(raw, 0.0), 1.0),
                         "empirical": emp, "side": side, "bound_raw": raw})
    if out_format == "json":
        emit(json.dumps({"sigmas": list(spec.sigmas), "rows": rows}, indent=2) + "\n", output)
    else:
        emit(to_csv(BOUNDS_COLUMNS, rows), output)


COST_COLUMNS = (
    "P", "doubling_messages", "doubling_words", "incrementing_messages",
    "incrementing_words", "message_ratio", "gs_messages", "gs_words",
    "redistribution_messages", "redistribution_words",
    "doubling_flops", "incrementing_flops",
)
LEGACY_COLUMNS = (
    "legacy_id_messages", "legacy_id_words",
    "legacy_redistribution_messages", "legacy_redistribution_words",
)


@main.command("cost")
@opt("--m", type=click.IntRange(1), default=100000, show_default=True)
@opt("--r", type=click.IntRange(1), default=512, show_default=True)
@opt("--d0", type=click.IntRange(1), default=8, show_default=True)
@opt("--dd", type=click.IntRange(1), default=64, show_default=True)
@opt("--P", "Ps", callback=int_list, default="4,16,64", show_default=True)
@opt("--nb", type=click.IntRange(1), default=64, show_default=True)
@opt("--levels", type=click.IntRange(1), default=1, show_default=True,
     help="process-halving levels for redistribution")
@opt("--legacy", is_flag=True, default=False, help="add the earlier doubling analysis")
@opt("--out", "out_format", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@opt("--output", "-o", default=None)
def cmd_cost(m, r, d0, dd, Ps, nb, levels, legacy, out_format, output):
    """Doubling vs Incrementing communication and flop models per P."""
    if any(P < 1 for P in Ps):
        raise click.BadParameter("P must be positive", param_hint="--P")
    if r < d0:
        raise click.BadParameter("r must be at least d0", param_hint="--r")
    fd = cost.flops_doubling(m, r, d0)
    fi = cost.flops_incrementing(m, r, d0, dd)
    rows = []
    for P in Ps:
        dbl = cost.cost_doubling_comm(r, d0, m, P).closed
        inc = cost.cost_incrementing_comm(r, dd, m, P)
        row = {
            "P": P,
            "doubling_messages": dbl.messages, "doubling_words": dbl.words,
            "incrementing_messages": inc.total.messages, "incrementing_words": inc.total.words,
            "message_ratio": inc.total.messages / dbl.messages if dbl.messages else None,
            "gs_messages": inc.gs.closed.messages, "gs_words": inc.gs.closed.words,
            "redistribution_messages": None, "redistribution_words": None,
            "doubling_flops": fd.total, "incrementing_flops": fi.total,
        }
        if P >= 2:
            red = cost.cost_redistribution(m, dd, P, levels, r).all_restarts.closed
            row["redistribution_messages"], row["redistribution_words"] = red.messages, red.words
        if legacy:
            lid = cost.cost_doubling_comm_legacy(r, d0, m, P, nb).closed
            row["legacy_id_messages"], row["legacy_id_words"] = lid.messages, lid.words
            row["legacy_redistribution_messages"] = row["legacy_redistribution_words"] = None
            if P >= 2:
                lred = cost.cost_redistribution_legacy(m, r, d0, P, levels).closed
                row["legacy_redistribution_messages"] = lred.messages
                row["legacy_redistribution_words"] = lred.words
        rows.append(row)
    cols = COST_COLUMNS + (LEGACY_COLUMNS if legacy else ())
    if out_format == "json":
        body = {
            "flops": {
                "doubling": {"total": fd.total, "leading": fd.leading, "worst_case": fd.worst_case},
                "incrementing": {"total": fi.total, "leading": fi.leading},
                "leading_ratio": fi.leading / fd.leading,
            },
            "rows": [{c: row.get(c) for c in cols} for row in rows],
        }
        emit(json.dumps(body, indent=2) + "\n", output)
    else:
        emit(to_csv(cols, rows), output)


if __name__ == "__main__":  # pragma: no cover
    main()
