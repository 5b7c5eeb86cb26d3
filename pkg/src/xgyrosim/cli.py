"""Command-line front end: ``plan``, ``run``, ``compare`` and ``trace-dump``.

Exit status is 0 on success, 1 for configuration/validation errors and 2 for
runtime (fabric or orchestrator) failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from typing import Any, Sequence

from . import __version__, kernels
from .config import FORMATS, MODES, ConfigError, RunConfig, parse_config
from .fabric import TRACE_FIELDS, CollectiveError, TraceEvent, trace_report
from .grid import LayoutError, Phase, ensemble_coll_layout, layout_for, plan_grid
from .orchestrator import (
    STR_TAGS,
    EnsembleError,
    RunResult,
    TransposeError,
    build_comm_plan,
    memory_report,
    run_sequential_baseline,
    run_single,
    run_xgyro,
)

RUN_SCHEMA = "xgyrosim.run/1"
COMPARE_SCHEMA = "xgyrosim.compare/1"
PLAN_SCHEMA = "xgyrosim.plan/1"
COMPARE_FIELDS = (
    "mode",
    "total_time",
    "str_comm_time",
    "coll_comm_time",
    "matvecs",
    "max_rank_bytes",
    "str_comm_size",
)


def execute(cfg: RunConfig, mode: str | None = None) -> RunResult:
    mode = mode or cfg.mode
    params = cfg.sim_params()
    opts = dict(cost=cfg.cost, element_width=cfg.element_width)
    if mode == "single":
        return run_single(params[0], cfg.total_ranks, cfg.n_t, cfg.steps, **opts)
    if mode == "sequential":
        return run_sequential_baseline(cfg.ensemble(), cfg.n_t, cfg.steps, **opts)
    return run_xgyro(cfg.ensemble(), cfg.n_t, cfg.steps, **opts)


# --------------------------------------------------------------------------
# plan


def plan_data(cfg: RunConfig) -> dict[str, Any]:
    dims, total, n_t = cfg.dims, cfg.total_ranks, cfg.n_t
    k = cfg.k if cfg.mode == "xgyro" else 1
    per_sim = total // k
    grid = plan_grid(dims, per_sim, n_t)
    coll = ensemble_coll_layout(dims, total, n_t, k)
    plan = build_comm_plan("xgyro" if cfg.mode == "xgyro" else "single", dims, total, n_t, k)
    rows = []
    str_layout = layout_for(Phase.STR, dims, grid)
    nl_layout = None
    try:
        nl_layout = layout_for(Phase.NL, dims, grid)
    except LayoutError:
        pass
    for rank in range(total):
        sim, local = divmod(rank, per_sim)
        coll_slab = coll.slab(coll.slot_of(rank))
        nc_loc, _, nt_loc = coll_slab.length
        rows.append({
            "rank": rank,
            "sim": sim,
            "str": str(str_layout.slab(local)),
            "coll": str(coll_slab),
            "nl": str(nl_layout.slab(local)) if nl_layout else "-",
            "cmat_elements": dims.nv * dims.nv * nc_loc * nt_loc,
        })
    memory = memory_report(cfg.mode, cfg.ensemble(), n_t, cfg.element_width)
    return {
        "schema": PLAN_SCHEMA,
        "mode": cfg.mode,
        "k": k,
        "grid": {"n_ranks_per_sim": per_sim, "n_a": grid.n_a, "n_t": n_t},
        "str_comm_size": plan.str_size,
        "coll_comm_size": plan.coll_size,
        "str_groups": [list(g) for g in plan.str_groups],
        "coll_groups": [list(g) for g in plan.coll_groups],
        "ranks": rows,
        "memory": memory.record(),
    }


def render_plan(data: dict[str, Any], fmt: str) -> str:
    if fmt == "json":
        return _json(data)
    if fmt == "csv":
        return _csv(["rank", "sim", "str", "coll", "nl", "cmat_elements"], data["ranks"])
    lines = [
        f"mode {data['mode']}  k={data['k']}  ranks/sim={data['grid']['n_ranks_per_sim']}"
        f"  n_a={data['grid']['n_a']}  n_t={data['grid']['n_t']}",
        f"str nv-split communicator size {data['str_comm_size']}, "
        f"coll communicator size {data['coll_comm_size']}",
        "",
        f"{'rank':>4} {'sim':>3}  {'str slab':<34} {'coll slab':<34} {'nl slab':<34} {'cmat':>8}",
    ]
    for r in data["ranks"]:
        lines.append(f"{r['rank']:>4} {r['sim']:>3}  {r['str']:<34} {r['coll']:<34} "
                     f"{r['nl']:<34} {r['cmat_elements']:>8}")
    lines += ["", _memory_table(data["memory"])]
    return "\n".join(lines) + "\n"


def _memory_table(mem: dict[str, Any]) -> str:
    lines = [f"memory per rank ({mem['mode']}, k={mem['k']}, {mem['n_ranks']} ranks):"]
    for name, b in mem["per_rank_bytes"].items():
        lines.append(f"  {name:<8} {b:>12} B   job total {mem['job_total_bytes'][name]:>12} B")
    lines.append(f"  {'total':<8} {mem['per_rank_total']:>12} B")
    lines.append(f"  cmat_ratio {mem['cmat_ratio']:.6g}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# run


def _group_records(trace: Sequence[TraceEvent]) -> list[dict[str, Any]]:
    return [
        {
            "phase_tag": g.phase_tag,
            "kind": g.kind.value,
            "count": g.count,
            "total_bytes": g.total_bytes,
            "max_comm_size": g.max_comm_size,
            "total_time": g.total_time,
        }
        for g in trace_report(trace)
    ]


def run_data(cfg: RunConfig, result: RunResult) -> dict[str, Any]:
    return {
        "schema": RUN_SCHEMA,
        "config": cfg.echo(),
        "results": [r.record() for r in result.results],
        "trace": _group_records(result.trace),
        "kernels": {
            "matvecs_total": result.total_matvecs,
            "matvecs_max_per_rank": max(result.matvecs),
        },
        "memory": result.memory.record(),
    }


def render_run(data: dict[str, Any], fmt: str) -> str:
    if fmt == "json":
        return _json(data)
    if fmt == "csv":
        return (
            _csv(["sim_id", "ordered_sum", "digest", "steps_run"], data["results"])
            + "\n"
            + _csv(["phase_tag", "kind", "count", "total_bytes", "max_comm_size", "total_time"],
                   data["trace"])
        )
    lines = [f"{'sim':>3}  {'ordered_sum':>24}  {'digest':>16}  steps"]
    for r in data["results"]:
        lines.append(f"{r['sim_id']:>3}  {r['ordered_sum']!r:>24}  {r['digest']:>16}  "
                     f"{r['steps_run']}")
    lines += ["", f"{'phase_tag':<16} {'kind':<10} {'count':>6} {'bytes':>12} "
                  f"{'max_p':>5} {'modeled_s':>12}"]
    for g in data["trace"]:
        lines.append(f"{g['phase_tag']:<16} {g['kind']:<10} {g['count']:>6} "
                     f"{g['total_bytes']:>12} {g['max_comm_size']:>5} {g['total_time']:>12.6e}")
    k = data["kernels"]
    lines += ["", f"matvecs {k['matvecs_total']} (max per rank {k['matvecs_max_per_rank']})",
              "", _memory_table(data["memory"])]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# compare


@dataclass(frozen=True)
class CompareRow:
    mode: str
    total_time: float
    str_comm_time: float
    coll_comm_time: float
    matvecs: int
    max_rank_bytes: int
    str_comm_size: int

    @classmethod
    def from_run(cls, mode: str, result: RunResult) -> "CompareRow":
        total = str_t = coll_t = 0.0
        str_size = 0
        for ev in result.trace:
            total = total + ev.modeled_time
            if ev.phase_tag in STR_TAGS:
                str_t = str_t + ev.modeled_time
                str_size = max(str_size, ev.comm_size)
            elif ev.phase_tag.startswith("coll."):
                coll_t = coll_t + ev.modeled_time
        return cls(mode, total, str_t, coll_t, result.total_matvecs,
                   result.memory.per_rank_total, str_size or result.plan.str_size)


def _ratio(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0 if a == 0.0 else math.inf
    return a / b


def compare_data(cfg: RunConfig) -> dict[str, Any]:
    seq = CompareRow.from_run("sequential", execute(cfg, "sequential"))
    xg = CompareRow.from_run("xgyro", execute(cfg, "xgyro"))
    speedup = _ratio(seq.total_time, xg.total_time)
    str_ratio = _ratio(seq.str_comm_time, xg.str_comm_time)
    return {
        "schema": COMPARE_SCHEMA,
        "config": cfg.echo(),
        "rows": [seq.__dict__, xg.__dict__],
        "speedup": speedup,
        "str_comm_ratio": str_ratio,
    }


def _finite(x: float) -> float | None:
    return x if math.isfinite(x) else None


def render_compare(data: dict[str, Any], fmt: str) -> str:
    if fmt == "json":
        out = dict(data, speedup=_finite(data["speedup"]),
                   str_comm_ratio=_finite(data["str_comm_ratio"]))
        return _json(out)
    if fmt == "csv":
        return _csv(list(COMPARE_FIELDS), data["rows"]) + (
            f"# speedup={data['speedup']!r} str_comm_ratio={data['str_comm_ratio']!r}\n"
        )
    cfg = data["config"]
    lines = [
        f"k={cfg['k']} dims={cfg['dims']} ranks={cfg['total_ranks']} n_t={cfg['n_t']} "
        f"steps={cfg['steps']} alpha={cfg['alpha']!r} beta={cfg['beta']!r}",
        f"{'mode':<11} {'total_s':>12} {'str_comm_s':>12} {'coll_comm_s':>12} "
        f"{'matvecs':>9} {'max_rank_B':>11} {'str_p':>5}",
    ]
    for r in data["rows"]:
        lines.append(
            f"{r['mode']:<11} {r['total_time']:>12.6e} {r['str_comm_time']:>12.6e} "
            f"{r['coll_comm_time']:>12.6e} {r['matvecs']:>9} {r['max_rank_bytes']:>11} "
            f"{r['str_comm_size']:>5}"
        )
    lines.append(f"speedup {data['speedup']:.6g}  str_comm_ratio {data['str_comm_ratio']:.6g}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# trace dump


def trace_csv(trace: Sequence[TraceEvent]) -> str:
    return _csv(list(TRACE_FIELDS), [ev.record() for ev in trace])


# --------------------------------------------------------------------------


def _json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _csv(fields: list[str], rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xgyrosim",
        description="Distributed tensor layouts and shared-cmat ensembles on a simulated fabric.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("plan", "show per-rank slabs, communicators and memory without stepping"),
        ("run", "execute the configured mode"),
        ("compare", "run the sequential baseline and the ensemble side by side"),
        ("trace-dump", "write one CSV row per collective event"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--ranks", type=int, dest="total_ranks")
        p.add_argument("--nt", type=int, dest="n_t")
        p.add_argument("--k", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--dims", type=_dims_arg, help="nc,nv,nt")
        p.add_argument("--seed", type=int)
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--out", help="write output here instead of stdout")
    return parser


def _dims_arg(text: str) -> list[int]:
    try:
        dims = [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three integers a,b,c, got {text!r}")
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"expected three integers a,b,c, got {text!r}")
    return dims


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", newline="") as fh:
        fh.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        key: getattr(args, key)
        for key in ("mode", "total_ranks", "n_t", "k", "steps", "dims", "seed", "format")
    }
    try:
        cfg = parse_config(args.config, overrides)
        if args.command == "compare":
            if cfg.mode == "single":
                raise ConfigError("mode", "compare needs an ensemble (sequential or xgyro)")
            cfg = _as_xgyro(cfg)
    except (ConfigError, LayoutError, EnsembleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "plan":
            text = render_plan(plan_data(cfg), cfg.format)
        elif args.command == "run":
            text = render_run(run_data(cfg, execute(cfg)), cfg.format)
        elif args.command == "compare":
            text = render_compare(compare_data(cfg), cfg.format)
        else:
            text = trace_csv(execute(cfg).trace)
        _emit(text, args.out)
    except TransposeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except (LayoutError, EnsembleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CollectiveError, kernels.KernelError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def _as_xgyro(cfg: RunConfig) -> RunConfig:
    """Compare runs both modes, so the ensemble must satisfy xgyro validation."""
    return parse_config(None, dict(cfg.echo(), mode="xgyro"))


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
