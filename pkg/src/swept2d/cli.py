"""Command-line harness: ``run``, ``bench``, ``model`` and ``verify``.

Settings come from built-in defaults, then an optional ``--config`` file,
then ``--key value`` flags.  The config file is INI style with flat keys;
section names only group keys, except ``[params]`` whose entries go to the
kernel (same as ``--param name=value``).

Exit codes: 0 success, 1 verification divergence, 2 usage or invalid
configuration, 3 numeric or kernel-contract failure, 4 transport, protocol
or codec failure.  Every error is reported as one ``error[<kind>]: ...``
line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import logging
import math
import statistics
import sys
import time

import numpy as np

from . import engines, perfmodel
from .codec import encode_field
from .errors import (CodecError, KernelContractError, NumericError, ProtocolError, TransportError,
                     ValidationError)
from .grid import Grid, make_topology, scatter
from .kernels import KERNEL_NAMES, build_kernel
from .transport import InProcTransport, LatencyTransport, TcpGroup, TcpTransport, local_roster, read_roster

log = logging.getLogger("swept2d")

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE, EXIT_NUMERIC, EXIT_TRANSPORT = 0, 1, 2, 3, 4

BENCH_COLUMNS = ("kernel", "engine", "px", "py", "n", "points_per_rank", "tau_injected_us", "substeps",
                 "us_per_substep", "messages_per_rank", "bytes_per_rank")
RUN_COLUMNS = BENCH_COLUMNS + ("exchanges_per_rank", "compute_us_per_substep", "wait_us_per_substep")


def _int_list(text):
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def _str_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key: (parser, default, help)
SCHEMA = {
    "kernel": (str, "wave", f"stencil program ({', '.join(KERNEL_NAMES)})"),
    "init": (str, None, "initial condition: ones | index | random | pulse (kernel default if unset)"),
    "seed": (int, 0, "seed for random initial data and random kernels"),
    "px": (int, 2, "ranks along x"),
    "py": (int, 2, "ranks along y"),
    "n": (int, 8, "points per rank side (even, >= 4)"),
    "engine": (str, "swept", "serial | classic | swept"),
    "transport": (str, "inproc", "inproc | tcp"),
    "roster": (str, None, "TCP roster file with 'rank cx cy host port' lines"),
    "rank": (int, None, "with tcp: run only this rank (one process per rank)"),
    "tau_us": (float, 0.0, "injected one-way latency in microseconds (inproc only)"),
    "cycles": (int, None, "swept cycles; sets substeps = cycles * n"),
    "substeps": (int, None, "sub-steps to advance (default n)"),
    "repeats": (int, 5, "bench: timed repetitions per point (median reported)"),
    "warmup": (int, 2, "bench: untimed warm-up repetitions"),
    "min_substeps": (int, 64, "bench: lower bound on sub-steps per repetition"),
    "n_list": (_int_list, [8, 16, 32, 64], "bench/verify: comma-separated n values"),
    "engines": (_str_list, ["swept", "classic"], "bench: comma-separated engines"),
    "snapshot": (str, None, "run: write the final field here (SWF2 format)"),
    "out": (str, None, "CSV output path (default stdout)"),
    "s": (float, None, "model: seconds per sub-step per point"),
    "tau": (float, None, "model: one-way latency in seconds"),
    "latency_presets": (_str_list, [], f"model: latency presets ({', '.join(perfmodel.LATENCY_PRESETS)}, or all)"),
    "compute_presets": (_str_list, [], f"model: compute presets ({', '.join(perfmodel.COMPUTE_PRESETS)}, or all)"),
    "n_min": (int, 4, "model: smallest n"),
    "n_max": (int, 4096, "model: largest n"),
    "max_px": (int, 3, "verify: largest px"),
    "max_py": (int, 3, "verify: largest py"),
    "kernels": (_str_list, ["increment", "identity", "wave", "wide-stencil", "euler"], "verify: kernels"),
    "max_cycles": (int, 1, "verify: run 1..max_cycles swept cycles"),
    "timeout": (float, 60.0, "seconds a receive may block before failing"),
}
SECTIONLESS_PARAMS = "params"


class UsageError(ValidationError):
    pass


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                        help="kernel parameter, e.g. cfl=0.3 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    for key, (_, default, help_text) in SCHEMA.items():
        flags = ["--" + key]
        if "_" in key:
            flags.append("--" + key.replace("_", "-"))
        common.add_argument(*flags, dest=key, default=None, help=f"{help_text} [default: {default}]")
    common.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="swept2d", description="Swept-rule 2D stencil engines and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="advance one configuration and report")
    sub.add_parser("bench", parents=[common], help="sweep n for several engines; emit CSV")
    sub.add_parser("model", parents=[common], help="evaluate the cost model; emit curve CSV")
    sub.add_parser("verify", parents=[common], help="check engines against the serial oracle")
    return parser


def load_settings(args):
    """Merge defaults, config file and flags into one dict."""
    cfg = {k: default for k, (_, default, _) in SCHEMA.items()}
    params = {}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError("config", str(exc)) from None
        for section in cp.sections():
            for key, value in cp.items(section):
                if section == SECTIONLESS_PARAMS:
                    params[key] = value
                    continue
                if key not in SCHEMA:
                    raise UsageError(key, f"unknown key in [{section}] of {args.config}")
                cfg[key] = _parse(key, value)
    for key in SCHEMA:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = _parse(key, value)
    for item in args.param:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise UsageError("param", f"expected NAME=VALUE, got {item!r}")
        params[name.strip()] = value.strip()
    cfg["params"] = params
    cfg["inject_fault"] = args.inject_fault
    return cfg


def _parse(key, value):
    conv = SCHEMA[key][0]
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(key, f"cannot parse {value!r}: {exc}") from None


# --- shared plumbing -----------------------------------------------------------

def _check_run_config(cfg):
    if cfg["engine"] not in ("serial", "classic", "swept"):
        raise UsageError("engine", f"must be serial, classic or swept, got {cfg['engine']!r}")
    if cfg["transport"] not in ("inproc", "tcp"):
        raise UsageError("transport", f"must be inproc or tcp, got {cfg['transport']!r}")
    topo = make_topology(cfg["px"], cfg["py"], cfg["n"])
    n = topo.n
    if cfg["cycles"] is not None:
        if cfg["cycles"] < 1:
            raise UsageError("cycles", f"must be >= 1, got {cfg['cycles']}")
        substeps = cfg["cycles"] * n
    else:
        substeps = n if cfg["substeps"] is None else cfg["substeps"]
    if substeps < 0:
        raise UsageError("substeps", f"must be non-negative, got {substeps}")
    if cfg["engine"] == "swept" and substeps % n:
        raise UsageError("substeps", f"swept engine needs a multiple of n={n}, got {substeps}")
    if cfg["tau_us"] < 0:
        raise UsageError("tau_us", f"must be non-negative, got {cfg['tau_us']}")
    if cfg["transport"] == "tcp" and cfg["tau_us"]:
        raise UsageError("tau_us", "latency injection needs the inproc transport")
    return topo, substeps


def make_transport(cfg, topo):
    if cfg["transport"] == "tcp":
        roster = read_roster(cfg["roster"]) if cfg["roster"] else local_roster(topo)
        if len(roster) != topo.size:
            raise UsageError("roster", f"has {len(roster)} ranks, topology needs {topo.size}")
        return TcpGroup(roster, timeout=cfg["timeout"], connect_timeout=cfg["timeout"])
    inner = InProcTransport(topo.size, timeout=cfg["timeout"])
    tau = cfg["tau_us"] * 1e-6
    return LatencyTransport(inner, tau) if tau > 0 else inner


def execute(cfg, prog, field, topo, engine, substeps):
    """Run one engine; returns ``(gathered field, report)``."""
    if engine == "serial":
        t0 = time.perf_counter()
        out = engines.serial_reference(prog, field, substeps)
        wall = time.perf_counter() - t0
        return out, engines.EngineReport("serial", substeps, wall, [engines.RankStats(compute_time=wall)])
    grids = scatter(topo, field)
    transport = make_transport(cfg, topo)
    try:
        if engine == "swept":
            grids, report = engines.run_swept(prog, topo, transport, grids, substeps // topo.n,
                                              fault=cfg.get("inject_fault", False), timeout=cfg["timeout"])
        else:
            grids, report = engines.run_classic(prog, topo, transport, grids, substeps, timeout=cfg["timeout"])
    finally:
        transport.close("run finished")
    return engines.gather(topo, grids, report.shift), report


def report_row(cfg, topo, report):
    per = report.substeps or 1
    ranks = report.ranks
    return dict(
        kernel=cfg["kernel"], engine=report.engine, px=topo.px, py=topo.py, n=topo.n,
        points_per_rank=topo.n * topo.n, tau_injected_us=cfg["tau_us"], substeps=report.substeps,
        us_per_substep=f"{report.wall_time / per * 1e6:.3f}",
        messages_per_rank=max(r.messages_sent for r in ranks),
        bytes_per_rank=max(r.bytes_sent for r in ranks),
        exchanges_per_rank=max(r.exchanges for r in ranks),
        compute_us_per_substep=f"{max(r.compute_time for r in ranks) / per * 1e6:.3f}",
        wait_us_per_substep=f"{max(r.wait_time for r in ranks) / per * 1e6:.3f}",
    )


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def write_rows(path, columns, rows):
    fh, close = _open_out(path)
    try:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    finally:
        if close:
            fh.close()


# --- commands ----------------------------------------------------------------

def cmd_run(cfg):
    topo, substeps = _check_run_config(cfg)
    prog, field = build_kernel(cfg["kernel"], topo.width, topo.height, seed=cfg["seed"], init=cfg["init"],
                               **cfg["params"])
    if cfg["transport"] == "tcp" and cfg["rank"] is not None:
        return _run_tcp_rank(cfg, topo, prog, field, substeps)
    out, report = execute(cfg, prog, field, topo, cfg["engine"], substeps)
    if cfg["snapshot"]:
        with open(cfg["snapshot"], "wb") as fh:
            fh.write(encode_field(out))
    write_rows(cfg["out"], RUN_COLUMNS, [report_row(cfg, topo, report)])
    return EXIT_OK


GATHER_TAG = 0x20000000


def _run_tcp_rank(cfg, topo, prog, field, substeps):
    """One rank of a multi-process TCP run; rank 0 gathers and reports."""
    if cfg["engine"] == "serial":
        raise UsageError("engine", "the serial engine has no ranks")
    if not cfg["roster"]:
        raise UsageError("roster", "a roster file is required when --rank is given")
    roster = read_roster(cfg["roster"])
    rank = cfg["rank"]
    if len(roster) != topo.size or not 0 <= rank < topo.size:
        raise UsageError("rank", f"rank {rank} / roster of {len(roster)} does not fit {topo.size} ranks")
    grid = scatter(topo, field)[rank]
    transport = TcpTransport(rank, roster, timeout=cfg["timeout"], connect_timeout=cfg["timeout"])
    try:
        ep = transport.endpoint(rank)
        t0 = time.perf_counter()
        if cfg["engine"] == "swept":
            grid, stats = engines.swept_rank(prog, topo, ep, rank, grid, 2 * (substeps // topo.n),
                                             timeout=cfg["timeout"])
        else:
            grid, stats = engines.classic_rank(prog, topo, ep, rank, grid, substeps, timeout=cfg["timeout"])
        wall = time.perf_counter() - t0
        header = np.array([grid.step, stats.messages_sent, stats.bytes_sent, stats.exchanges], dtype="<f8")
        payload = np.concatenate((header, np.asarray(grid.values, dtype="<f8").ravel())).tobytes()
        ep.send(0, GATHER_TAG | rank, payload)
        if rank == 0:
            grids, all_stats = [], []
            for r in range(topo.size):
                data = np.frombuffer(ep.recv(r, GATHER_TAG | r, cfg["timeout"]), dtype="<f8")
                step = int(data[0])
                grids.append(Grid(topo.n, step, data[4:].reshape(topo.n, topo.n, -1)))
                all_stats.append(engines.RankStats(messages_sent=int(data[1]), bytes_sent=int(data[2]),
                                                   exchanges=int(data[3])))
            out = engines.gather(topo, grids)
            report = engines.EngineReport(cfg["engine"], substeps, wall, all_stats)
            if cfg["snapshot"]:
                with open(cfg["snapshot"], "wb") as fh:
                    fh.write(encode_field(out))
            write_rows(cfg["out"], RUN_COLUMNS, [report_row(cfg, topo, report)])
        else:
            # Keep the connection open until rank 0 has read everything.
            time.sleep(0.2)
    finally:
        transport.close("run finished")
    return EXIT_OK


def bench_rows(cfg):
    rows = []
    for n in cfg["n_list"]:
        topo = make_topology(cfg["px"], cfg["py"], n)
        prog, field = build_kernel(cfg["kernel"], topo.width, topo.height, seed=cfg["seed"], init=cfg["init"],
                                   **cfg["params"])
        substeps = max(n, math.ceil(cfg["min_substeps"] / n) * n)
        for engine in cfg["engines"]:
            if engine not in ("serial", "classic", "swept"):
                raise UsageError("engines", f"unknown engine {engine!r}")
            times, last = [], None
            for i in range(cfg["warmup"] + cfg["repeats"]):
                _, last = execute(cfg, prog, field, topo, engine, substeps)
                if i >= cfg["warmup"]:
                    times.append(last.wall_time / substeps)
            row = report_row(cfg, topo, last)
            row["us_per_substep"] = f"{statistics.median(times) * 1e6:.3f}"
            rows.append(row)
            log.info("bench %s n=%d: %s us/substep", engine, n, row["us_per_substep"])
    return rows


def cmd_bench(cfg):
    if cfg["repeats"] < 1 or cfg["warmup"] < 0:
        raise UsageError("repeats", "need repeats >= 1 and warmup >= 0")
    if not cfg["n_list"]:
        raise UsageError("n_list", "must name at least one n")
    cfg = dict(cfg, engine="swept")
    _check_run_config(dict(cfg, n=cfg["n_list"][0], cycles=None, substeps=None))
    write_rows(cfg["out"], BENCH_COLUMNS, bench_rows(cfg))
    return EXIT_OK


def _resolve(names, table, key):
    if names == ["all"]:
        return list(table.values())
    out = []
    for name in names:
        if name not in table:
            raise UsageError(key, f"unknown preset {name!r}; choose from {', '.join(table)} or all")
        out.append(table[name])
    return out


def cmd_model(cfg):
    s_values = _resolve(cfg["compute_presets"], perfmodel.COMPUTE_PRESETS, "compute_presets")
    tau_values = _resolve(cfg["latency_presets"], perfmodel.LATENCY_PRESETS, "latency_presets")
    if cfg["s"] is not None:
        s_values.append(cfg["s"])
    if cfg["tau"] is not None:
        tau_values.append(cfg["tau"])
    if not s_values or not tau_values:
        raise UsageError("s", "give --s/--tau or --compute-presets/--latency-presets")
    if cfg["n_min"] % 2 or cfg["n_min"] < 4 or cfg["n_max"] < cfg["n_min"]:
        raise UsageError("n_min", f"need even n_min >= 4 and n_max >= n_min, got {cfg['n_min']}..{cfg['n_max']}")
    ns = list(range(cfg["n_min"], cfg["n_max"] + 1, 2))
    write_rows(cfg["out"], perfmodel.CURVE_COLUMNS, perfmodel.model_curves(ns, s_values, tau_values))
    for s, tau in itertools.product(s_values, tau_values):
        opt = perfmodel.optimal_n(s, tau, cfg["n_min"], cfg["n_max"])
        print(f"optimum s={s:.6g} tau={tau:.6g} n={opt.n} cost={opt.cost:.6g} analytic={opt.analytic:.6g} "
              f"breaks_barrier={opt.cost < tau}", file=sys.stderr)
    return EXIT_OK


def first_divergence(topo, expected, got, shift=(0, 0)):
    """``(rank, i, j)`` of the first differing point in row-major order, or None."""
    a = expected.values.view(np.uint64)
    b = got.values.view(np.uint64)
    diff = np.argwhere((a != b).any(axis=2))
    if diff.size == 0:
        return None
    j, i = (int(x) for x in diff[0])
    sx, sy = shift
    cx, cy = ((i - sx) % topo.width) // topo.n, ((j - sy) % topo.height) // topo.n
    return topo.rank_of((cx, cy)), i, j


def verify_cases(cfg):
    for kernel in cfg["kernels"]:
        if kernel not in KERNEL_NAMES:
            raise UsageError("kernels", f"unknown kernel {kernel!r}")
        for n, px, py in itertools.product(cfg["n_list"], range(1, cfg["max_px"] + 1), range(1, cfg["max_py"] + 1)):
            for cycles in range(1, cfg["max_cycles"] + 1):
                yield kernel, make_topology(px, py, n), cycles


def cmd_verify(cfg):
    if cfg["max_px"] < 1 or cfg["max_py"] < 1 or cfg["max_cycles"] < 1:
        raise UsageError("max_px", "max_px, max_py and max_cycles must be >= 1")
    failures = checked = 0
    for kernel, topo, cycles in verify_cases(cfg):
        prog, field = build_kernel(kernel, topo.width, topo.height, seed=cfg["seed"], **(
            cfg["params"] if kernel in ("wave", "euler") else {}))
        substeps = cycles * topo.n
        ref = engines.serial_reference(prog, field, substeps)
        run_cfg = dict(cfg, transport="inproc", tau_us=0.0)
        for engine in ("swept", "classic"):
            out, _ = execute(run_cfg, prog, field, topo, engine, substeps)
            checked += 1
            where = first_divergence(topo, ref, out)
            if where is not None:
                failures += 1
                rank, i, j = where
                print(f"divergence kernel={kernel} engine={engine} topo={topo.px}x{topo.py} n={topo.n} "
                      f"cycles={cycles} step={out.step} rank={rank} i={i} j={j}")
                if failures >= 10:
                    print("stopping after 10 divergences")
                    return EXIT_DIVERGED
        log.info("verified %s %dx%d n=%d cycles=%d", kernel, topo.px, topo.py, topo.n, cycles)
    print(f"verify: {checked - failures}/{checked} engine runs bitwise equal to the serial oracle")
    return EXIT_DIVERGED if failures else EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "model": cmd_model, "verify": cmd_verify}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_settings(args)
        return COMMANDS[args.command](cfg)
    except (TransportError, ProtocolError, CodecError) as exc:
        print(f"error[transport]: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (NumericError, KernelContractError) as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
