"""Experiment orchestration: configuration, Monte-Carlo sweeps, MAC runs,
calibration runs, CSV emission, and static SVG plots.

Every detector in a sweep sees the identical (channel, symbols, noise) per
trial, so differences between rows are attributable to detectors alone.
Per-trial randomness derives from (seed, snr_index, trial_index); results are
independent of batching or worker count.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .detectors import (
    RadiusPolicy,
    babai_point,
    brute_force_ml,
    detect_mmse,
    detect_mrc,
    detect_zf,
    sphere_decode,
)
from .errors import ConfigError
from .lsr import (
    CalibrationSetup,
    calibration_stats,
    load_table,
    lsr_detect,
    table_from_stats,
)
from .mac import InfoSetSpec, MacConfig, MacCurve, mac_lsr, mac_sd
from .model import (
    make_constellation,
    random_symbols,
    realify,
    sample_flat_rayleigh,
    symbol_errors,
    toeplitz_from_taps,
    total_snr_db_to_rho,
    transmit,
)
from .numerics import Rng

__all__ = [
    "ExperimentConfig",
    "DetectorSpec",
    "SweepRow",
    "SweepResult",
    "load_config",
    "run_sweep",
    "run_calibration",
    "run_mac",
    "emit_csv",
    "parse_csv",
    "emit_mac_csv",
    "emit_svg",
]

CSV_HEADER = "detector,snr_total_db,ser,ser_ci,mean_nodes,mean_kr,p_kr0,trials,seed"
MAC_CSV_HEADER = "info_set,snr_total_db,mac,trials_outer,trials_inner,seed"

_SCENARIOS = ("flat-mimo", "freq-selective")
_DETECTOR_TYPES = ("zf", "mmse", "mrc", "babai", "ml", "sd", "lsr")


@dataclass(frozen=True)
class DetectorSpec:
    name: str
    type: str
    mode: str = "se"                 # sd: enumeration order
    epsilon: float = 0.01            # sd fp radius coverage failure
    restart_growth: float = 2.0
    initial: str = "mmse"            # lsr: linear initial point
    table: str | None = None         # lsr: threshold table path
    sd_mode: str = "se"              # lsr: reduced-search mode
    scale: float = 2.0               # reserved for high-snr threshold tables


@dataclass
class ExperimentConfig:
    scenario: str
    L: int
    K: int
    modulation_kind: str
    modulation_M: int
    snr_grid_db: list
    trials: int
    seed: int
    detectors: list
    L_c: int = 1
    workers: int = 1
    calibration: dict = field(default_factory=dict)
    mac: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        def need(key):
            if key not in doc:
                raise ConfigError(f"missing config key {key!r}")
            return doc[key]

        scenario = need("scenario")
        if scenario not in _SCENARIOS:
            raise ConfigError(f"scenario must be one of {_SCENARIOS}, got {scenario!r}")
        mod = need("modulation")
        if not isinstance(mod, dict) or "kind" not in mod or "M" not in mod:
            raise ConfigError("modulation must be a section with 'kind' and 'M'")
        try:
            make_constellation(mod["kind"], int(mod["M"]))
        except Exception as exc:
            raise ConfigError(f"bad modulation: {exc}") from None
        grid = [float(v) for v in need("snr_grid_db")]
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("snr_grid_db must be nonempty and strictly ascending")
        trials = int(need("trials"))
        if trials < 1:
            raise ConfigError("trials must be at least 1")
        L, K = int(need("L")), int(need("K"))
        L_c = int(doc.get("L_c", 1))
        if L < 1 or K < 1 or L_c < 1:
            raise ConfigError("L, K, L_c must be positive")
        if scenario == "freq-selective" and L != K + L_c - 1:
            raise ConfigError(f"freq-selective needs L = K + L_c - 1 = {K + L_c - 1}, got {L}")
        dets = []
        names = set()
        for d in need("detectors"):
            if "name" not in d or "type" not in d:
                raise ConfigError("every detector needs 'name' and 'type'")
            if d["type"] not in _DETECTOR_TYPES:
                raise ConfigError(f"unknown detector type {d['type']!r}")
            if d["name"] in names:
                raise ConfigError(f"duplicate detector name {d['name']!r}")
            names.add(d["name"])
            if d["type"] == "lsr" and not d.get("table"):
                raise ConfigError(f"lsr detector {d['name']!r} needs a 'table' path")
            if d["type"] == "sd" and d.get("mode", "se") not in ("fp", "se"):
                raise ConfigError(f"sd detector {d['name']!r} mode must be 'fp' or 'se'")
            eps = float(d.get("epsilon", 0.01))
            if not 0.0 < eps < 1.0:
                raise ConfigError("epsilon must lie in (0, 1)")
            growth = float(d.get("restart_growth", 2.0))
            if growth <= 1.0:
                raise ConfigError("restart_growth must exceed 1")
            dets.append(DetectorSpec(
                name=d["name"], type=d["type"], mode=d.get("mode", "se"), epsilon=eps,
                restart_growth=growth, initial=d.get("initial", "mmse"),
                table=d.get("table"), sd_mode=d.get("sd_mode", "se"),
                scale=float(d.get("scale", 2.0)),
            ))
        if not dets:
            raise ConfigError("at least one detector is required")
        return ExperimentConfig(
            scenario=scenario, L=L, K=K, modulation_kind=mod["kind"],
            modulation_M=int(mod["M"]), snr_grid_db=grid, trials=trials,
            seed=int(need("seed")), detectors=dets, L_c=L_c,
            workers=int(doc.get("workers", 1)),
            calibration=dict(doc.get("calibration", {})),
            mac=dict(doc.get("mac", {})),
            outputs=dict(doc.get("outputs", {})),
        )


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(doc)
    if seed_override is not None:
        cfg.seed = int(seed_override)
    return cfg


@dataclass(frozen=True)
class SweepRow:
    detector: str
    snr_total_db: float
    ser: float
    ser_ci: float
    mean_nodes: float
    mean_kr: float
    p_kr0: float
    trials: int
    seed: int
    wall_time: float = 0.0  # not part of the CSV schema

    def csv_fields(self):
        return (self.detector, self.snr_total_db, self.ser, self.ser_ci,
                self.mean_nodes, self.mean_kr, self.p_kr0, self.trials, self.seed)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple

    def row(self, detector: str, snr_db: float) -> SweepRow:
        for r in self.rows:
            if r.detector == detector and abs(r.snr_total_db - snr_db) < 1e-9:
                return r
        raise KeyError((detector, snr_db))


def _draw_channel(cfg: ExperimentConfig, rng: Rng):
    if cfg.scenario == "flat-mimo":
        return sample_flat_rayleigh(cfg.L, cfg.K, rng)
    taps = (rng.standard_normal(cfg.L_c) + 1j * rng.standard_normal(cfg.L_c)) / math.sqrt(2.0)
    return toeplitz_from_taps(taps, cfg.K)


def _build_runner(det: DetectorSpec, config_dir: Path | None, K: int):
    """Returns run(model) -> (DetectorOutput, reduced_size)."""
    if det.type == "zf":
        return lambda model: (detect_zf(model), K)
    if det.type == "mmse":
        return lambda model: (detect_mmse(model), K)
    if det.type == "mrc":
        return lambda model: (detect_mrc(model), K)
    if det.type == "babai":
        return lambda model: (babai_point(model), K)
    if det.type == "ml":
        return lambda model: (brute_force_ml(model), K)
    if det.type == "sd":
        kind = "lattice-independent" if det.mode == "fp" else "lattice-dependent"
        policy = RadiusPolicy(kind, det.epsilon, det.restart_growth)
        return lambda model: (sphere_decode(model, policy, mode=det.mode), K)
    if det.type == "lsr":
        path = Path(det.table)
        if config_dir is not None and not path.is_absolute():
            path = config_dir / path
        table = load_table(path)

        def run(model):
            out = lsr_detect(model, det.initial, table, det.sd_mode)
            return out, K - len(out.relied_indices)

        return run
    raise ConfigError(f"unknown detector type {det.type!r}")


def _sweep_point(cfg: ExperimentConfig, config_dir, g: int) -> list:
    """All detector rows for one SNR grid point (paired trials)."""
    const = make_constellation(cfg.modulation_kind, cfg.modulation_M)
    runners = [(d, _build_runner(d, config_dir, cfg.K)) for d in cfg.detectors]
    rng = Rng(cfg.seed)
    db = cfg.snr_grid_db[g]
    rho = total_snr_db_to_rho(db, cfg.K)
    n_det = len(runners)
    err = np.zeros(n_det)
    nodes = np.zeros(n_det)
    kr_sum = np.zeros(n_det)
    kr0 = np.zeros(n_det)
    wall = np.zeros(n_det)
    for t in range(cfg.trials):
        r = rng.derive(g, t)
        channel = _draw_channel(cfg, r)
        H_r, axis = realify(channel, const)
        s_true = random_symbols(axis, H_r.shape[1], r)
        model, _ = transmit(H_r, s_true, rho, r, const, axis)
        for i, (_, run) in enumerate(runners):
            t0 = time.perf_counter()
            out, kr = run(model)
            wall[i] += time.perf_counter() - t0
            err[i] += symbol_errors(out.s_hat, s_true, const).sum()
            nodes[i] += out.visited_nodes
            kr_sum[i] += kr
            kr0[i] += 1.0 if kr == 0 else 0.0
    n_sym = cfg.trials * cfg.K
    rows = []
    for i, (det, _) in enumerate(runners):
        p = err[i] / n_sym
        ci = 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / n_sym)
        rows.append(SweepRow(
            detector=det.name, snr_total_db=db, ser=p, ser_ci=ci,
            mean_nodes=nodes[i] / cfg.trials, mean_kr=kr_sum[i] / cfg.trials,
            p_kr0=kr0[i] / cfg.trials, trials=cfg.trials, seed=cfg.seed,
            wall_time=wall[i],
        ))
    return rows


def _sweep_point_from_doc(doc: dict, config_dir_str, g: int) -> list:
    cfg = ExperimentConfig.from_dict(doc) if isinstance(doc, dict) else doc
    config_dir = Path(config_dir_str) if config_dir_str else None
    return _sweep_point(cfg, config_dir, g)


def run_sweep(cfg: ExperimentConfig, config_dir=None) -> SweepResult:
    """Paired Monte-Carlo sweep over the SNR grid for every configured detector."""
    config_dir = Path(config_dir) if config_dir else None
    n_points = len(cfg.snr_grid_db)
    if cfg.workers > 1 and n_points > 1:
        doc = _config_to_doc(cfg)
        per_point = [None] * n_points
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            futs = {ex.submit(_sweep_point_from_doc, doc,
                              str(config_dir) if config_dir else None, g): g
                    for g in range(n_points)}
            for fut, g in futs.items():
                per_point[g] = fut.result()
    else:
        per_point = [_sweep_point(cfg, config_dir, g) for g in range(n_points)]
    rows = []
    for i in range(len(cfg.detectors)):
        for g in range(n_points):
            rows.append(per_point[g][i])
    return SweepResult(tuple(rows))


def _config_to_doc(cfg: ExperimentConfig) -> dict:
    return {
        "scenario": cfg.scenario, "L": cfg.L, "K": cfg.K, "L_c": cfg.L_c,
        "modulation": {"kind": cfg.modulation_kind, "M": cfg.modulation_M},
        "snr_grid_db": list(cfg.snr_grid_db), "trials": cfg.trials, "seed": cfg.seed,
        "workers": 1,
        "detectors": [
            {"name": d.name, "type": d.type, "mode": d.mode, "epsilon": d.epsilon,
             "restart_growth": d.restart_growth, "initial": d.initial,
             "table": d.table, "sd_mode": d.sd_mode, "scale": d.scale}
            for d in cfg.detectors
        ],
        "calibration": cfg.calibration, "mac": cfg.mac, "outputs": cfg.outputs,
    }


def run_calibration(cfg: ExperimentConfig, config_dir=None):
    """Calibrate thresholds for this configuration; returns (table, stats)."""
    cal = cfg.calibration
    setup = CalibrationSetup(
        scenario=cfg.scenario, L=cfg.L, K=cfg.K,
        modulation_kind=cfg.modulation_kind, modulation_M=cfg.modulation_M,
        snr_grid_db=list(cfg.snr_grid_db),
        trials=int(cal.get("trials", 20000)),
        initial=cal.get("initial", "mmse"),
        L_c=cfg.L_c,
        eta_grid_size=int(cal.get("eta_grid_size", 64)),
        min_error_events=int(cal.get("min_error_events", 30)),
        pool_across_k=cal.get("pool_across_k"),
        ml_oracle=cal.get("ml_oracle", "auto"),
    )
    stats = calibration_stats(setup, Rng(cfg.seed))
    method = cal.get("method", "exact")
    table = table_from_stats(stats, method, scale=float(cal.get("scale", 2.0)))
    return table, stats


def run_mac(cfg: ExperimentConfig, info_set_kind: str, config_dir=None) -> MacCurve:
    """MAC curve for the requested information set kind."""
    mac_opts = cfg.mac
    mcfg = MacConfig(
        scenario=cfg.scenario, L=cfg.L, K=cfg.K,
        modulation_kind=cfg.modulation_kind, modulation_M=cfg.modulation_M,
        snr_grid_db=list(cfg.snr_grid_db),
        outer=int(mac_opts.get("outer", 200)),
        inner=int(mac_opts.get("inner", 10000)),
        L_c=cfg.L_c,
        min_cell_count=int(mac_opts.get("min_cell_count", 25)),
    )
    spec = InfoSetSpec(info_set_kind, epsilon=float(mac_opts.get("epsilon", 0.01)))
    rng = Rng(cfg.seed)
    if spec.kind in ("radius-li", "radius-ld"):
        return mac_sd(spec, mcfg, rng)
    table_path = mac_opts.get("table")
    if not table_path:
        raise ConfigError("point-conditioned MAC runs need mac.table in the config")
    path = Path(table_path)
    if config_dir is not None and not path.is_absolute():
        path = Path(config_dir) / path
    return mac_lsr(spec, mcfg, rng, load_table(path))


# ---------------------------------------------------------------------------
# emission


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def emit_csv(result: SweepResult, path):
    """One row per (detector, SNR); floats in shortest round-trip decimal."""
    lines = [CSV_HEADER]
    for r in result.rows:
        lines.append(",".join(_fmt(v) for v in r.csv_fields()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_csv(path) -> SweepResult:
    text = Path(path).read_text(encoding="utf-8").strip().split("\n")
    if text[0] != CSV_HEADER:
        raise ConfigError(f"unexpected CSV header {text[0]!r}")
    rows = []
    for line in text[1:]:
        if not line:
            continue
        f = line.split(",")
        rows.append(SweepRow(
            detector=f[0], snr_total_db=float(f[1]), ser=float(f[2]), ser_ci=float(f[3]),
            mean_nodes=float(f[4]), mean_kr=float(f[5]), p_kr0=float(f[6]),
            trials=int(f[7]), seed=int(f[8]),
        ))
    return SweepResult(tuple(rows))


def emit_mac_csv(curve: MacCurve, path):
    lines = [MAC_CSV_HEADER]
    for db, v in zip(curve.snr_grid_db, curve.mac_values):
        lines.append(",".join([
            curve.info_set.kind, _fmt(db), _fmt(v),
            str(curve.trials_outer), str(curve.trials_inner), str(curve.seed),
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def _svg_panel(out, x0, y0, w, h, title, ylabel, series, log_y):
    """Axes, ticks, and one polyline per (name, color, xs, ys) series."""
    xs_all = [x for _, _, xs, _ in series for x in xs]
    if not xs_all:
        return
    xmin, xmax = min(xs_all), max(xs_all)
    if xmax == xmin:
        xmax = xmin + 1.0
    ys_all = [y for _, _, _, ys in series for y in ys if (y > 0 if log_y else True)]
    if not ys_all:
        ys_all = [1e-3, 1.0]
    if log_y:
        ymin = 10.0 ** math.floor(math.log10(min(ys_all)))
        ymax = 10.0 ** math.ceil(math.log10(max(max(ys_all), min(ys_all) * 1.01)))
        if ymax <= ymin:
            ymax = ymin * 10.0
    else:
        ymin, ymax = 0.0, max(ys_all) * 1.05 or 1.0

    def px(x):
        return x0 + (x - xmin) / (xmax - xmin) * w

    def py(y):
        if log_y:
            return y0 + h - (math.log10(y) - math.log10(ymin)) / (
                math.log10(ymax) - math.log10(ymin)) * h
        return y0 + h - (y - ymin) / (ymax - ymin) * h

    out.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#333"/>')
    out.append(f'<text x="{x0 + w / 2}" y="{y0 - 8}" text-anchor="middle" '
               f'font-size="14">{escape(title)}</text>')
    out.append(f'<text x="{x0 + w / 2}" y="{y0 + h + 32}" text-anchor="middle" '
               f'font-size="12">Total SNR (dB)</text>')
    out.append(f'<text x="{x0 - 46}" y="{y0 + h / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 {x0 - 46} {y0 + h / 2})">{escape(ylabel)}</text>')
    # x ticks
    n_ticks = 6
    for i in range(n_ticks + 1):
        xv = xmin + (xmax - xmin) * i / n_ticks
        out.append(f'<line x1="{px(xv):.1f}" y1="{y0 + h}" x2="{px(xv):.1f}" '
                   f'y2="{y0 + h + 4}" stroke="#333"/>')
        out.append(f'<text x="{px(xv):.1f}" y="{y0 + h + 16}" text-anchor="middle" '
                   f'font-size="10">{xv:.1f}</text>')
    # y ticks
    if log_y:
        dec = int(math.log10(ymax) - math.log10(ymin))
        step = max(1, dec // 6)
        e = math.log10(ymin)
        while e <= math.log10(ymax) + 1e-9:
            yv = 10.0 ** e
            out.append(f'<line x1="{x0 - 4}" y1="{py(yv):.1f}" x2="{x0}" '
                       f'y2="{py(yv):.1f}" stroke="#333"/>')
            out.append(f'<text x="{x0 - 8}" y="{py(yv):.1f}" text-anchor="end" '
                       f'font-size="10">1e{int(round(e))}</text>')
            e += step
    else:
        for i in range(6):
            yv = ymin + (ymax - ymin) * i / 5
            out.append(f'<line x1="{x0 - 4}" y1="{py(yv):.1f}" x2="{x0}" '
                       f'y2="{py(yv):.1f}" stroke="#333"/>')
            out.append(f'<text x="{x0 - 8}" y="{py(yv):.1f}" text-anchor="end" '
                       f'font-size="10">{yv:.4g}</text>')
    # series
    for name, color, xs, ys in series:
        pts = [(px(x), py(y)) for x, y in zip(xs, ys) if (y > 0 if log_y else True)]
        if pts:
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.6"/>')
            for x, y in pts:
                out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.4" fill="{color}"/>')


def emit_svg(result: SweepResult, path):
    """Self-contained SVG: log-scale SER panel above a linear node-count panel."""
    detectors = []
    for r in result.rows:
        if r.detector not in detectors:
            detectors.append(r.detector)
    ser_series = []
    node_series = []
    for i, name in enumerate(detectors):
        rows = [r for r in result.rows if r.detector == name]
        color = _PALETTE[i % len(_PALETTE)]
        xs = [r.snr_total_db for r in rows]
        ser_series.append((name, color, xs, [r.ser for r in rows]))
        node_series.append((name, color, xs, [r.mean_nodes for r in rows]))
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           '<svg xmlns="http://www.w3.org/2000/svg" width="760" height="980" '
           'font-family="sans-serif">',
           '<rect width="760" height="980" fill="white"/>']
    _svg_panel(out, 80, 40, 620, 360, "Symbol error probability", "SER", ser_series, True)
    _svg_panel(out, 80, 520, 620, 360, "Average visited nodes", "nodes", node_series, False)
    for i, name in enumerate(detectors):
        color = _PALETTE[i % len(_PALETTE)]
        y = 430 + 14 * i if i < 6 else 430 + 14 * (i - 6)
        x = 90 if i < 6 else 400
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 24}" y2="{y}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{x + 30}" y="{y + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
