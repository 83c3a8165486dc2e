"""Monte Carlo fit-versus-N study: orchestration, aggregation and reports."""
from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple

import numpy as np

from .errors import SomivError
from .estim import PredictorKind, estimate, model_fit, param_error
from .sim import run_experiment

CHANNELS = ("surge", "sway", "yaw_rate")
_COLORS = {"iv1": "#7f7f7f", "iv2": "#1f77b4", "iv3": "#d62728", "ls": "#2ca02c"}


class RunRecord(NamedTuple):
    estimator: str
    wind_case: float
    N: int
    channel: str
    run: int
    fit: float
    param_err: float
    converged: bool


class Summary(NamedTuple):
    mean: float
    std: float
    n_runs: int
    diverged: int
    median_param_err: float


class StudyResult:
    """Per-run records plus deterministic aggregation."""

    def __init__(self, records, config=None):
        self.records = sorted(records, key=_record_key(config))
        self.config = config

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, StudyResult):
            return NotImplemented
        return [tuple(map(repr, r)) for r in self.records] == \
               [tuple(map(repr, r)) for r in other.records]

    def fits(self, estimator, wind_case, N, channel):
        return np.array([r.fit for r in self.records
                         if (r.estimator, r.wind_case, r.N, r.channel)
                         == (estimator, wind_case, N, channel)])

    def param_errors(self, estimator, wind_case, N):
        return np.array([r.param_err for r in self.records
                         if (r.estimator, r.wind_case, r.N, r.channel)
                         == (estimator, wind_case, N, CHANNELS[0])])

    def summary(self):
        """``{(estimator, wind, N, channel): Summary}``; diverged runs are excluded from means."""
        groups = defaultdict(list)
        for r in self.records:
            groups[(r.estimator, r.wind_case, r.N, r.channel)].append(r)
        out = {}
        for key, rows in groups.items():
            fits = np.array([r.fit for r in rows])
            ok = np.isfinite(fits)
            errs = np.array([r.param_err for r in rows])
            errs = errs[np.isfinite(errs)]
            mean = float(np.mean(fits[ok])) if ok.any() else float("nan")
            std = float(np.std(fits[ok])) if ok.any() else float("nan")
            out[key] = Summary(mean, std, len(rows), int((~ok).sum()),
                               float(np.median(errs)) if errs.size else float("nan"))
        return out


def _record_key(config):
    order = {k: i for i, k in enumerate(config.estimators)} if config is not None else {}

    def key(r):
        return (r.wind_case, r.N, order.get(r.estimator, r.estimator), r.run,
                CHANNELS.index(r.channel))
    return key


def experiment_seed(master, rep, index):
    """Integer seed of estimation experiment ``index`` in repetition ``rep``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(rep), int(index)))
    return int(ss.generate_state(1)[0])


def experiment_heading(index, n_experiments):
    return 2.0 * math.pi * index / n_experiments


def design_for(cfg, index):
    """Sign-diverse static offsets: odd experiments mirror sway force and yaw moment."""
    return cfg.design.mirrored() if index % 2 else cfg.design


def make_experiments(cfg, rep, wind):
    """Estimation experiments of one repetition at the largest grid size."""
    noise = cfg.noise.with_wind(wind)
    n_d = cfg.max_samples_per_experiment
    return [run_experiment(cfg.true_params, design_for(cfg, i), noise, n_d,
                           seed=experiment_seed(cfg.seed, rep, i),
                           psi0=experiment_heading(i, cfg.n_experiments), dt=cfg.dt)
            for i in range(cfg.n_experiments)]


def make_validation(cfg):
    """Shared undisturbed, noise-free zigzag validation experiment."""
    noise = cfg.noise.without_measurement_noise().without_disturbances()
    return run_experiment(cfg.true_params, cfg.design.validation(), noise,
                          cfg.validation_length, seed=int(cfg.seed), psi0=0.0, dt=cfg.dt)


def run_repetition(cfg, rep, validation=None):
    """All estimator/grid/wind results of one repetition (independent of others)."""
    validation = validation if validation is not None else make_validation(cfg)
    truth = cfg.true_params.as_array()
    records = []
    for wind in cfg.winds:
        full = make_experiments(cfg, rep, wind)
        for N in cfg.grid:
            n_d = N // cfg.n_experiments
            datasets = [ds.truncate(n_d) for ds in full]
            for name in cfg.estimators:
                kind = PredictorKind.parse(name)
                try:
                    res = estimate(datasets, kind, cfg.nominal, cfg.options)
                    fits = model_fit(validation, res.theta)
                    err = param_error(res.theta, truth)
                    conv = res.converged
                except (SomivError, np.linalg.LinAlgError):
                    fits, err, conv = np.full(3, -np.inf), float("nan"), False
                for c, ch in enumerate(CHANNELS):
                    records.append(RunRecord(kind.value, wind, N, ch, rep, float(fits[c]),
                                             float(err), bool(conv)))
    return records


def _run_rep_task(args):
    cfg, rep = args
    return run_repetition(cfg, rep)


def run_study(cfg, progress=None):
    """Run every repetition (in parallel when ``cfg.jobs > 1``) and merge by run index."""
    reps = list(range(cfg.reps))
    if cfg.jobs > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_run_rep_task, [(cfg, r) for r in reps]))
    else:
        validation = make_validation(cfg)
        chunks = []
        for r in reps:
            chunks.append(run_repetition(cfg, r, validation))
            if progress is not None:
                progress(r + 1, len(reps))
    return StudyResult([rec for chunk in chunks for rec in chunk], cfg)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _num(x):
    return format(float(x), ".17g")


def _wind_tag(w):
    return format(w, "g").replace(".", "p")


def emit_reports(res, directory, channels=CHANNELS):
    """Write raw and aggregate CSV tables plus one SVG chart per (wind, channel)."""
    channels = tuple(channels)
    if not channels:
        raise ValueError("channel filter is empty")
    unknown = set(channels) - set(CHANNELS)
    if unknown:
        raise ValueError(f"unknown channels: {', '.join(sorted(unknown))}")
    if not res.records:
        raise ValueError("study result is empty")
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise SomivError(f"cannot create output directory {directory}: {exc}") from None
    if not os.access(directory, os.W_OK):
        raise SomivError(f"output directory is not writable: {directory}")

    written = []
    raw_path = os.path.join(directory, "study_runs.csv")
    with open(raw_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "wind_case", "N", "channel", "run", "fit", "param_err"])
        for r in res.records:
            if r.channel in channels:
                w.writerow([r.estimator, _num(r.wind_case), r.N, r.channel, r.run, _num(r.fit),
                            _num(r.param_err)])
    written.append(raw_path)

    summary = res.summary()
    agg_path = os.path.join(directory, "study_summary.csv")
    with open(agg_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "wind_case", "N", "channel", "mean_fit", "std_fit", "runs",
                    "diverged", "median_param_err"])
        for key in sorted(summary, key=_summary_key(res)):
            est, wind, N, ch = key
            if ch not in channels:
                continue
            s = summary[key]
            w.writerow([est, _num(wind), N, ch, _num(s.mean), _num(s.std), s.n_runs, s.diverged,
                        _num(s.median_param_err)])
    written.append(agg_path)

    winds = sorted({r.wind_case for r in res.records})
    for wind in winds:
        for ch in channels:
            path = os.path.join(directory, f"fit_wind{_wind_tag(wind)}_{ch}.svg")
            with open(path, "w") as fh:
                fh.write(render_svg(summary, wind, ch, _estimator_order(res)))
            written.append(path)
    return written


def _estimator_order(res):
    if res.config is not None:
        return list(res.config.estimators)
    return sorted({r.estimator for r in res.records})


def _summary_key(res):
    order = {k: i for i, k in enumerate(_estimator_order(res))}

    def key(k):
        est, wind, N, ch = k
        return (wind, N, order.get(est, 99), CHANNELS.index(ch))
    return key


def render_svg(summary, wind, channel, estimators, width=640, height=400):
    """Line chart of mean fit versus N, one curve per estimator, clipped to [0, 100].

    Triangles mark mean plus and minus one standard deviation. Points outside
    the visible range are omitted (the tables keep them).
    """
    ml, mr, mt, mb = 60, 110, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    keys = [k for k in summary if k[1] == wind and k[3] == channel]
    grid = sorted({k[2] for k in keys})
    lo, hi = (grid[0], grid[-1]) if grid else (0, 1)
    span = (hi - lo) or 1

    def sx(n):
        return ml + (n - lo) / span * pw if len(grid) > 1 else ml + pw / 2

    def sy(f):
        return mt + (100.0 - f) / 100.0 * ph

    def visible(f):
        return math.isfinite(f) and 0.0 <= f <= 100.0

    out = [f'<?xml version="1.0" encoding="UTF-8" standalone="yes"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
           f'font-size="13">Model fit, {channel}, mean wind {wind:g} m/s</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for f in range(0, 101, 20):
        y = sy(f)
        out.append(f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{f}</text>')
    for n in grid:
        x = sx(n)
        out.append(f'<line x1="{x:.1f}" y1="{mt + ph}" x2="{x:.1f}" y2="{mt + ph + 4}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 17}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{n}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">N</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {mt + ph / 2:.1f})">fit</text>')

    for idx, est in enumerate(estimators):
        color = _COLORS.get(est, "#000000")
        pts = [(n, summary[(est, wind, n, channel)]) for n in grid
               if (est, wind, n, channel) in summary]
        segment = []
        segments = []
        for n, s in pts:
            if visible(s.mean):
                segment.append(f"{sx(n):.1f},{sy(s.mean):.1f}")
            elif segment:
                segments.append(segment)
                segment = []
        if segment:
            segments.append(segment)
        for seg in segments:
            if len(seg) == 1:
                x, y = seg[0].split(",")
                out.append(f'<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>')
            else:
                out.append(f'<polyline points="{" ".join(seg)}" fill="none" stroke="{color}" '
                           f'stroke-width="1.8"/>')
        for n, s in pts:
            if not math.isfinite(s.std):
                continue
            for f, up in ((s.mean + s.std, True), (s.mean - s.std, False)):
                if visible(f):
                    out.append(_triangle(sx(n), sy(f), up, color))
        ly = mt + 14 + 18 * idx
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 34}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 40}" y="{ly + 4}" font-family="sans-serif" '
                   f'font-size="11">{est.upper()}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _triangle(x, y, up, color, r=4.0):
    if up:
        pts = [(x, y - r), (x - r, y + r * 0.7), (x + r, y + r * 0.7)]
    else:
        pts = [(x, y + r), (x - r, y - r * 0.7), (x + r, y - r * 0.7)]
    coords = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
    return f'<polygon points="{coords}" fill="none" stroke="{color}"/>'
