"""Command-line harness: single runs, the scenario x controller matrix,
networked server/client processes and report comparison."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Settings, load_config
from .energy import (EV_PROXY, ICEV_PROXY, MetricsReport, proxy_power, read_report, run_metrics,
                     write_report)
from .sim import (CONTROLLERS, SCENARIOS, RunResult, ScenarioConfig, run_loopback, run_networked,
                  write_trace)
from .sim.runner import run_client, serve

logger = logging.getLogger("vilsim")

BASELINE = "wie"
COLUMN_ORDER = ("wie", "idm", "mpc-u", "mpc-c")
ROWS = (("travel_time", "Travel Time [s]", 1), ("avg_headway", "Avg. Headway [s]", 1),
        ("mean_gap", "Mean Gap [m]", 0), ("max_gap", "Max. Gap [m]", 0), ("net_energy", "Net Energy", 0))
POWERTRAINS = {"ev": EV_PROXY, "icev": ICEV_PROXY}


# -- comparison -------------------------------------------------------------

def pct_delta(value: float | None, base: float | None, decimals: int) -> str:
    """Signed percentage change, ``0%`` when it rounds to zero."""
    if value is None or base is None or base == 0:
        return ""
    pct = round(100.0 * (value - base) / abs(base), decimals)
    if pct == 0:
        return "0%"
    return f"{pct:+.{decimals}f}%"


@dataclass
class Comparison:
    scenario: str
    controllers: list[str]
    values: dict[str, dict[str, float | None]]
    deltas: dict[str, dict[str, str]] = field(default_factory=dict)

    def rows(self) -> list[list[str]]:
        header = ["metric"]
        for c in self.controllers:
            header += [c.upper(), f"{c.upper()} vs {BASELINE.upper()}"]
        out = [header]
        for key, label, _ in ROWS:
            row = [label]
            for c in self.controllers:
                v = self.values[c][key]
                row += ["" if v is None else f"{v:.6g}", self.deltas[c][key]]
            out.append(row)
        return out

    def format(self) -> str:
        rows = self.rows()
        widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
        lines = [f"scenario: {self.scenario}"]
        lines += ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join(lines)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())
        return path


def compare(reports: Sequence[MetricsReport]) -> Comparison:
    """Tabulate reports of one scenario against the WIE baseline."""
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    scenarios = {r.scenario for r in reports}
    if len(scenarios) != 1:
        raise ValueError(f"reports come from different scenarios: {sorted(scenarios)}")
    by_ctl = {}
    for r in reports:
        if r.controller in by_ctl:
            raise ValueError(f"two reports for controller {r.controller!r}")
        by_ctl[r.controller] = r
    if BASELINE not in by_ctl:
        raise ValueError("compare needs a WIE baseline report")
    order = [c for c in COLUMN_ORDER if c in by_ctl] + sorted(set(by_ctl) - set(COLUMN_ORDER))
    base = by_ctl[BASELINE]
    values = {c: {k: getattr(by_ctl[c], k) for k, _, _ in ROWS} for c in order}
    deltas = {c: {k: pct_delta(values[c][k], getattr(base, k), d) for k, _, d in ROWS} for c in order}
    return Comparison(scenarios.pop(), order, values, deltas)


# -- runs -------------------------------------------------------------------

def fresh_dir(path: Path) -> Path:
    """``path`` if unused, else the first free ``path.N``; runs never overwrite."""
    if not path.exists():
        return path
    k = 1
    while path.with_name(f"{path.name}.{k}").exists():
        k += 1
    return path.with_name(f"{path.name}.{k}")


def plot_vehicles(result: RunResult, upstream: int = 11) -> list[int]:
    """Ego, its leader, and the vehicles directly behind it."""
    n = result.v.shape[1]
    ids = {0, 1 % n} | {(-k) % n for k in range(1, min(upstream, n - 1) + 1)}
    return sorted(ids)


def write_plot_data(result: RunResult, path: Path, proxy=EV_PROXY) -> Path:
    """Tidy CSV: t, vehicle_id, v, u, gap, energy_rate."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vehicle_id", "v", "u", "gap", "energy_rate"])
        t = result.t
        for i in plot_vehicles(result):
            rate = proxy_power(result.v[:, i], result.a[:, i], proxy)
            for k in range(result.n_ticks):
                w.writerow([f"{t[k]:.1f}", i, f"{result.v[k, i]:.4f}", f"{result.u[k, i]:.4f}",
                            f"{result.gap[k, i]:.4f}", f"{rate[k]:.2f}"])
    return path


def run_one(cfg: ScenarioConfig, settings: Settings, out: Path, mode: str = "loopback",
            port: int = 47001, powertrain: str = "ev") -> MetricsReport:
    if mode == "loopback":
        result = run_loopback(cfg, settings.track, settings.params)
    else:
        result = run_networked(cfg, port, settings.params)
    run_dir = fresh_dir(out / f"{cfg.kind}-{cfg.controller}-seed{cfg.seed}")
    run_dir.mkdir(parents=True)
    write_trace(result, run_dir / "trace.csv")
    proxy = POWERTRAINS[powertrain]
    write_plot_data(result, run_dir / "plot.csv", proxy)
    if not result.completed:
        raise RuntimeError(f"{cfg.kind}/{cfg.controller}: run stopped before completing {cfg.laps} laps")
    report = run_metrics(result, proxy=proxy)
    write_report(report, run_dir / "metrics.csv")
    note = f"laps {cfg.discard_laps} discarded" if cfg.discard_laps else "no laps discarded"
    (run_dir / "run.txt").write_text(
        f"scenario = {cfg.kind}\ncontroller = {cfg.controller}\nlaps = {cfg.laps}\nseed = {cfg.seed}\n"
        f"mode = {mode}\npowertrain = {powertrain}\ncollisions = {result.collisions}\n"
        f"discarded = {note}\n")
    mean_solve = 1e3 * float(np.mean(result.solve_times)) if result.solve_times else 0.0
    print(f"{cfg.kind:9s} {cfg.controller:6s} ticks={result.n_ticks} wall={result.wall_time:.1f}s "
          f"speedup={result.speedup:.1f}x collisions={result.collisions} "
          f"mean_solve={mean_solve:.2f}ms -> {run_dir}")
    return report


def parse_matrix(entries: str | None, scenario: str, controller: str) -> list[tuple[str, str]]:
    if entries is None:
        scen = list(SCENARIOS) if scenario == "all" else [scenario]
        ctls = list(CONTROLLERS) if controller == "all" else [controller]
        return [(s, c) for s in scen for c in ctls]
    if entries == "all":
        return [(s, c) for s in SCENARIOS for c in CONTROLLERS]
    pairs = []
    for item in entries.split(","):
        s, _, c = item.strip().partition(":")
        if s not in SCENARIOS or c not in CONTROLLERS:
            raise ValueError(f"bad matrix entry {item!r}; expected scenario:controller")
        pairs.append((s, c))
    return pairs


def _scenario(cfg_map, args, kind: str, controller: str) -> ScenarioConfig:
    laps = args.laps
    if laps is None and "laps" not in cfg_map:
        laps = 6 if kind == "microsim" else 3
    return ScenarioConfig.from_mapping(cfg_map, kind=kind, controller=controller, laps=laps, seed=args.seed)


def cmd_run(args) -> int:
    cfg_map = load_config(args.config)
    settings = Settings.from_mapping(cfg_map)
    out = Path(args.out)
    matrix = parse_matrix(args.matrix, args.scenario, args.controller)
    reports: dict[str, list[MetricsReport]] = {}
    failed = 0
    for kind, controller in matrix:
        try:
            cfg = _scenario(cfg_map, args, kind, controller)
            reports.setdefault(kind, []).append(
                run_one(cfg, settings, out, args.mode, args.port, args.powertrain))
        except (OSError, ValueError, RuntimeError) as exc:
            failed += 1
            print(f"error: {kind}/{controller}: {exc}", file=sys.stderr)
    for kind, reps in reports.items():
        if len(reps) >= 2 and any(r.controller == BASELINE for r in reps):
            table = compare(reps)
            table.write(fresh_dir(out / f"comparison-{kind}-seed{args.seed}.csv"))
            print(table.format())
    return 1 if failed else 0


def cmd_compare(args) -> int:
    try:
        table = compare([read_report(p) for p in args.reports])
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(table.format())
    if args.out:
        table.write(args.out)
    return 0


def cmd_server(args) -> int:
    cfg_map = load_config(args.config)
    settings = Settings.from_mapping(cfg_map)
    cfg = _scenario(cfg_map, args, args.scenario, args.controller)
    outcome = serve(cfg, args.port, args.host, settings.track, settings.params, timeout=args.timeout)
    print(f"served {outcome.trace['tick'].size} ticks, collisions={outcome.collisions}")
    return 0


def cmd_client(args) -> int:
    cfg_map = load_config(args.config)
    settings = Settings.from_mapping(cfg_map)
    cfg = _scenario(cfg_map, args, args.scenario, args.controller)
    client = run_client(cfg, (args.host, args.port), settings.track, settings.params, args.timeout)
    print(f"client finished at t={client.t:.1f}s, lap {client.state.lap}, fallbacks={client.fallbacks}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vilsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, allow_all: bool):
        extra = ("all",) if allow_all else ()
        p.add_argument("--scenario", default="microsim", choices=SCENARIOS + extra)
        p.add_argument("--controller", default="wie", choices=CONTROLLERS + extra)
        p.add_argument("--laps", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--port", type=int, default=47001)
        p.add_argument("--config", default=None, help="flat key = value file")

    p = sub.add_parser("run", help="run scenarios and write artifacts")
    common(p, True)
    p.add_argument("--mode", default="loopback", choices=("loopback", "networked"))
    p.add_argument("--matrix", default=None, help="'all' or scenario:controller[,...]")
    p.add_argument("--out", default="runs")
    p.add_argument("--powertrain", default="ev", choices=sorted(POWERTRAINS))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="tabulate metrics reports against WIE")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    for name, func, help_ in (("server", cmd_server, "serve one networked client"),
                              ("client", cmd_client, "drive the ego against a server")):
        p = sub.add_parser(name, help=help_)
        common(p, False)
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--timeout", type=float, default=60.0)
        p.set_defaults(func=func)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
