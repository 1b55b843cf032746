"""Fuel and battery analytics, a tractive-energy proxy, and traffic-flow metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

AFR_S = 14.1          # stoichiometric air-fuel ratio of gasoline
R_S = 0.1             # battery series resistance [ohm]
BIN_WIDTH = 10.0      # MAF bin width [g/s]
V_MIN_HEADWAY = 0.1   # headway samples below this speed are dropped


# -- fuel -------------------------------------------------------------------

@dataclass(frozen=True)
class ObdFuelTrace:
    """OBD samples: time, mass airflow, commanded lambda and fuel trims [%]."""
    t: np.ndarray
    maf: np.ndarray
    lam: np.ndarray
    ltft: np.ndarray
    stft: np.ndarray

    def __post_init__(self):
        cols = {f.name: np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)}
        for name, col in cols.items():
            object.__setattr__(self, name, np.atleast_1d(col))
        n = self.t.size
        if any(getattr(self, f.name).size != n for f in fields(self)):
            raise ValueError("all OBD columns must have the same length")
        if n and np.any(np.diff(self.t) <= 0):
            raise ValueError("OBD time stamps must increase")
        if np.any(self.maf < 0):
            raise ValueError("mass airflow must be non-negative")
        if np.any(self.lam <= 0):
            raise ValueError("lambda must be positive")

    def __len__(self) -> int:
        return self.t.size

    @classmethod
    def from_csv(cls, path: str | Path) -> "ObdFuelTrace":
        """Columns ``t_s, maf_gps, lambda, ltft_pct, stft_pct``."""
        data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
        if data.size == 0:
            raise ValueError(f"{path}: no samples")
        return cls(data["t_s"], data["maf_gps"], data["lambda"], data["ltft_pct"], data["stft_pct"])


def trim_factor(ltft, stft, e_f: float = 0.0):
    """Per-sample air-path correction ``1 + (LTFT + STFT)/100 - e_F``."""
    return 1.0 + (np.asarray(ltft, dtype=float) + np.asarray(stft, dtype=float)) / 100.0 - e_f


@dataclass(frozen=True)
class MafCorrection:
    """Binned mean correction; looked up by linear interpolation between bin
    centres and held flat beyond the outermost bins."""
    centers: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    bin_width: float = BIN_WIDTH

    def __call__(self, maf):
        return np.interp(maf, self.centers, self.values)


def maf_correction(trace: ObdFuelTrace, e_f: float = 0.0, bin_width: float = BIN_WIDTH) -> MafCorrection:
    if len(trace) == 0:
        raise ValueError("empty OBD trace")
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    ea = trim_factor(trace.ltft, trace.stft, e_f)
    idx = np.floor(trace.maf / bin_width).astype(int)
    bins = np.unique(idx)
    means = np.array([ea[idx == b].mean() for b in bins])
    counts = np.array([(idx == b).sum() for b in bins])
    return MafCorrection((bins + 0.5) * bin_width, means, counts, bin_width)


def fuel_rate(maf, lam, correction: Callable | float | None = None, afr: float = AFR_S):
    """Commanded fuel flow [g/s] from airflow, lambda and the air-path correction."""
    maf = np.asarray(maf, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lambda must be positive")
    if correction is None:
        ea = 1.0
    elif callable(correction):
        ea = correction(maf)
    else:
        ea = float(correction)
    return maf / (afr * lam) * ea


def cumulative_fuel(trace: ObdFuelTrace, correction: Callable | float | None = None,
                    afr: float = AFR_S) -> np.ndarray:
    """Running fuel mass [g], trapezoidal in time, starting at 0."""
    rate = fuel_rate(trace.maf, trace.lam, correction, afr)
    return cumulative_trapezoid(rate, trace.t, initial=0.0)


def total_fuel(trace: ObdFuelTrace, correction: Callable | float | None = None, afr: float = AFR_S) -> float:
    return float(cumulative_fuel(trace, correction, afr)[-1])


def calibrate_e_f(trace: ObdFuelTrace, measured_fuel: float, bin_width: float = BIN_WIDTH,
                  afr: float = AFR_S) -> float:
    """The constant fuel-system trim that makes the estimated total match
    ``measured_fuel`` [g].

    Bin means shift by exactly ``-e_F``, so total fuel is affine in ``e_F``
    and the match is solved in closed form.
    """
    f0 = total_fuel(trace, maf_correction(trace, 0.0, bin_width), afr)
    slope = total_fuel(trace, 1.0, afr)
    if slope <= 0:
        raise ValueError("calibration trace has no airflow")
    return (f0 - measured_fuel) / slope


# -- battery ----------------------------------------------------------------

@dataclass(frozen=True)
class BatteryTrace:
    t: np.ndarray
    voltage: np.ndarray
    current: np.ndarray        # positive while discharging
    soc: np.ndarray | None = None

    def __post_init__(self):
        for name in ("t", "voltage", "current"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.soc is not None:
            object.__setattr__(self, "soc", np.atleast_1d(np.asarray(self.soc, dtype=float)))
        n = self.t.size
        if self.voltage.size != n or self.current.size != n or (self.soc is not None and self.soc.size != n):
            raise ValueError("all battery columns must have the same length")
        if n and np.any(np.diff(self.t) <= 0):
            raise ValueError("battery time stamps must increase")
        if np.any(self.voltage <= 0):
            raise ValueError("terminal voltage must be positive")

    @classmethod
    def from_csv(cls, path: str | Path) -> "BatteryTrace":
        """Columns ``t_s, voltage_v, current_a`` and optionally ``soc_pct``."""
        data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
        soc = data["soc_pct"] if "soc_pct" in data.dtype.names else None
        return cls(data["t_s"], data["voltage_v"], data["current_a"], soc)


def battery_power(trace: BatteryTrace, r_s: float = R_S) -> np.ndarray:
    """Internal (open-circuit side) power: terminal power plus resistive loss."""
    return trace.voltage * trace.current + r_s * trace.current ** 2


def battery_energy(trace: BatteryTrace, r_s: float = R_S) -> float:
    """Net battery energy [J] over the trace, trapezoidal in time."""
    if trace.t.size < 2:
        raise ValueError("battery energy needs at least two samples")
    return float(trapezoid(battery_power(trace, r_s), trace.t))


# -- tractive proxy ---------------------------------------------------------

@dataclass(frozen=True)
class ProxyParams:
    """Road-load coefficients and drivetrain efficiencies for the proxy.

    Above ``enrich_power`` the ICEV variant burns extra fuel as if running at
    ``enrich_lambda``.  These numbers are placeholders, not measured values.
    """
    mass: float = 1500.0
    c0: float = 120.0
    c1: float = 1.0
    c2: float = 0.55
    eta_drive: float = 0.85
    eta_regen: float = 0.60
    enrich_power: float = math.inf
    enrich_lambda: float = 0.88

    def __post_init__(self):
        if self.mass <= 0 or self.eta_drive <= 0:
            raise ValueError("mass and drive efficiency must be positive")
        if not 0.0 <= self.eta_regen <= 1.0:
            raise ValueError("regen efficiency must lie in [0, 1]")
        if not 0.0 < self.enrich_lambda <= 1.0:
            raise ValueError("enrichment lambda must lie in (0, 1]")


EV_PROXY = ProxyParams()
ICEV_PROXY = ProxyParams(eta_drive=0.25, eta_regen=0.0, enrich_power=30e3)


def wheel_power(v, a, p: ProxyParams = EV_PROXY):
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    return p.mass * a * v + (p.c0 + p.c1 * v + p.c2 * v ** 2) * v


def proxy_power(v, a, p: ProxyParams = EV_PROXY):
    """Source-side power: traction divided by ``eta_drive`` with enrichment
    above the threshold, braking recovered at ``eta_regen``."""
    pw = wheel_power(v, a, p)
    pos = np.maximum(pw, 0.0)
    rich = np.maximum(pos - p.enrich_power, 0.0) if math.isfinite(p.enrich_power) else 0.0
    drive = (pos + rich * (1.0 / p.enrich_lambda - 1.0)) / p.eta_drive
    return drive + np.minimum(pw, 0.0) * p.eta_regen


def tractive_proxy(v, a, t=None, p: ProxyParams = EV_PROXY, dt: float = 0.1) -> float:
    """Energy proxy [J] of a ``(v, a)`` trace, trapezoidal in time."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 0:
        raise ValueError("empty trace")
    if v.size == 1:
        return 0.0
    t = np.arange(v.size) * dt if t is None else np.asarray(t, dtype=float)
    return float(trapezoid(proxy_power(v, a, p), t))


def accel_squared(a, dt: float = 0.1) -> float:
    """Integral of a^2 over time (rectangle rule on the tick grid)."""
    a = np.asarray(a, dtype=float)
    return float(np.sum(a ** 2) * dt)


# -- traffic flow -----------------------------------------------------------

@dataclass
class LapMetrics:
    lap: int
    travel_time: float
    avg_headway: float | None
    mean_gap: float
    max_gap: float
    net_energy: float


@dataclass
class MetricsReport:
    """Aggregate ego metrics over the retained laps, plus a per-lap breakdown.

    ``mean_gap``/``max_gap`` are bumper to bumper; the ``_centre`` variants add
    one vehicle length.
    """
    scenario: str
    controller: str
    travel_time: float
    avg_headway: float | None
    mean_gap: float
    max_gap: float
    net_energy: float
    energy_unit: str = "J"
    accel_sq: float = 0.0
    mean_gap_centre: float = 0.0
    max_gap_centre: float = 0.0
    laps: list[LapMetrics] = field(default_factory=list)
    discarded_laps: int = 0

    TABLE_ROWS = (("travel_time", "Travel Time [s]"), ("avg_headway", "Avg. Headway [s]"),
                  ("mean_gap", "Mean Gap [m]"), ("max_gap", "Max. Gap [m]"), ("net_energy", "Net Energy"))

    def __post_init__(self):
        if self.max_gap < self.mean_gap:
            raise ValueError("max gap below mean gap")

    def row(self) -> dict[str, object]:
        return {k: v for k, v in asdict(self).items() if k != "laps"}


def headway(gap, v, v_min: float = V_MIN_HEADWAY) -> np.ndarray:
    """Time headway ``gap / v`` over the samples with ``v >= v_min``."""
    gap = np.asarray(gap, dtype=float)
    v = np.asarray(v, dtype=float)
    keep = v >= v_min
    return gap[keep] / v[keep]


def _mean_headway(gap, v) -> float | None:
    h = headway(gap, v)
    return float(h.mean()) if h.size else None


def flow_metrics(t, v, a, gap, lap_bounds: Sequence[int], discard: int = 0, scenario: str = "",
                 controller: str = "", proxy: ProxyParams = EV_PROXY,
                 vehicle_length: float = 5.0) -> MetricsReport:
    """Metrics for one vehicle's trace.

    ``lap_bounds`` holds the sample index at which each lap starts plus the
    index one past the end of the last complete lap; the first ``discard``
    laps are dropped.
    """
    t, v, a, gap = (np.asarray(x, dtype=float) for x in (t, v, a, gap))
    bounds = [int(b) for b in lap_bounds]
    n_laps = len(bounds) - 1
    if n_laps <= discard:
        raise ValueError(f"trace has {n_laps} complete laps, need more than {discard}")
    if bounds[-1] > t.size:
        raise ValueError("lap bounds run past the trace")
    dt = float(np.median(np.diff(t))) if t.size > 1 else 0.1
    laps = []
    for k in range(discard, n_laps):
        lo, hi = bounds[k], bounds[k + 1]
        # the end time of a lap is the start time of the next sample
        t_end = t[hi] if hi < t.size else t[hi - 1] + dt
        sl = slice(lo, min(hi + 1, t.size))
        laps.append(LapMetrics(k + 1, float(t_end - t[lo]), _mean_headway(gap[lo:hi], v[lo:hi]),
                               float(gap[lo:hi].mean()), float(gap[lo:hi].max()),
                               tractive_proxy(v[sl], a[sl], t[sl], proxy)))
    lo, hi = bounds[discard], bounds[-1]
    g = gap[lo:hi]
    return MetricsReport(
        scenario=scenario, controller=controller,
        travel_time=float(sum(l.travel_time for l in laps)),
        avg_headway=_mean_headway(g, v[lo:hi]),
        mean_gap=float(g.mean()), max_gap=float(g.max()),
        net_energy=float(sum(l.net_energy for l in laps)),
        accel_sq=accel_squared(a[lo:hi], dt),
        mean_gap_centre=float(g.mean()) + vehicle_length, max_gap_centre=float(g.max()) + vehicle_length,
        laps=laps, discarded_laps=discard)


def write_report(report: MetricsReport, path: str | Path) -> Path:
    """Write the aggregate as a one-row CSV and the per-lap rows to
    ``<stem>_laps.csv`` beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    row = report.row()
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow({k: _fmt(v) for k, v in row.items()})
    laps_path = path.with_name(path.stem + "_laps.csv")
    with laps_path.open("w", newline="") as fh:
        names = [f.name for f in fields(LapMetrics)]
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for lap in report.laps:
            w.writerow({k: _fmt(v) for k, v in asdict(lap).items()})
    return path


def read_report(path: str | Path) -> MetricsReport:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1:
        raise ValueError(f"{path}: expected one report row, found {len(rows)}")
    row = rows[0]
    kwargs = {}
    for f in fields(MetricsReport):
        if f.name == "laps" or f.name not in row:
            continue
        raw = row[f.name]
        if f.name in ("scenario", "controller", "energy_unit"):
            kwargs[f.name] = raw
        elif f.name == "discarded_laps":
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = None if raw == "" else float(raw)
    return MetricsReport(**kwargs)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 9))
    return str(v)


def run_metrics(result, vehicle: int = 0, proxy: ProxyParams = EV_PROXY) -> MetricsReport:
    """:class:`MetricsReport` for one vehicle of a simulation run, split into
    laps by the ego's start-line crossings."""
    cfg = result.cfg
    return flow_metrics(result.t, result.v[:, vehicle], result.a[:, vehicle], result.gap[:, vehicle],
                        result.lap_bounds, cfg.discard_laps, cfg.kind, cfg.controller, proxy,
                        result.track.vehicle_length)


def upstream_proxy(result, count: int = 11, proxy: ProxyParams = EV_PROXY) -> float:
    """Mean tractive proxy of the ``count`` vehicles directly behind the ego
    over the ego's retained laps."""
    n = result.v.shape[1]
    if count >= n:
        raise ValueError("not enough vehicles behind the ego")
    bounds = result.lap_bounds
    lo, hi = bounds[result.cfg.discard_laps], bounds[-1]
    sl = slice(lo, min(hi + 1, result.n_ticks))
    ids = [(-k) % n for k in range(1, count + 1)]
    return float(np.mean([tractive_proxy(result.v[sl, i], result.a[sl, i], result.t[sl], proxy) for i in ids]))
