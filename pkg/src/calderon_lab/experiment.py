"""Experiment families, the stability sweep, the log-law fit and file output."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cgo import assemble_pair
from .conductivity import gamma_to_q, perturbation_family
from .domain import (BoundaryTrace, BoxDomain, GridField, build_box, smooth_bump,
                     write_gridfield)
from .errors import CalderonLabError, LatticeError
from .forward import ForwardSolver, write_dtn
from .kelvin import KelvinMap, compare_dtn_norms, kelvin_pipeline, transform_potential
from .norms import TraceBasis, h_minus1_norm, operator_norm
from .recovery import even_transform, make_schedule, recover_q0

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("t", "delta", "err_inf", "err_h1neg", "R", "tau", "eps", "wall_ms")
DELTA_FLOOR = 1e-300


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(",", " ").split())


@dataclass
class ExperimentConfig:
    """Flat experiment description; every field is a config-file key.

    Coordinates of ``bump_center`` are those of the geometry: the box frame
    for ``geometry = a`` and original (pre-inversion) coordinates for
    ``geometry = b``.  ``None`` picks a centre inside the domain.
    """

    geometry: str = "a"
    ball_radius: float = 1.0
    resolution: int = 32
    box_lower: tuple = (0.0, 0.0, -1.0)
    box_upper: tuple = (1.0, 1.0, 0.0)
    base_q: float = 1.0
    bump_center: tuple | None = None
    bump_radius: float = 0.3
    bump_amplitude: float = 1.0
    amplitudes: tuple = (1.0, 0.5, 0.25, 0.125, 0.0625)
    modes: int = 4
    alpha: float = 1.0
    gamma_exponent: float | None = None
    r0: float = 2.0
    delta_tilde: float | None = None
    freq_radii: tuple = (2.0, 3.0, 4.0)
    tau: float = 2.0
    xi: tuple = (math.pi, 0.0, math.pi / 2)
    mode: str = "validation"
    seed: int = 0
    workers: int = 1
    record_timing: bool = False
    out: str = "out"

    def __post_init__(self):
        self.geometry = str(self.geometry).lower()
        if self.geometry not in ("a", "b"):
            raise ValueError("geometry must be 'a' or 'b'")
        self.box_lower = _floats(self.box_lower)
        self.box_upper = _floats(self.box_upper)
        self.amplitudes = _floats(self.amplitudes)
        self.freq_radii = _floats(self.freq_radii)
        self.xi = _floats(self.xi)
        if self.bump_center is not None:
            self.bump_center = _floats(self.bump_center)
        if len(self.amplitudes) < 3 or any(b >= a for a, b in zip(self.amplitudes, self.amplitudes[1:])):
            raise ValueError("amplitude ladder must be strictly decreasing with at least 3 entries")
        if self.mode not in ("validation", "blind"):
            raise ValueError("mode must be 'validation' or 'blind'")

    @property
    def domain(self) -> BoxDomain:
        return build_box(self.box_lower, self.box_upper, self.resolution)

    @property
    def kelvin(self) -> KelvinMap:
        return KelvinMap(self.ball_radius)

    def center(self) -> np.ndarray:
        if self.bump_center is not None:
            return np.asarray(self.bump_center)
        mid = 0.5 * (np.asarray(self.box_lower) + np.asarray(self.box_upper))
        if self.geometry == "a":
            return mid
        km = self.kelvin
        return km.inverse(km.from_flat(mid))

    def bump(self, amplitude: float = 1.0):
        return smooth_bump(self.center(), self.bump_radius, amplitude * self.bump_amplitude)

    def potential(self, amplitude: float = 0.0, domain: BoxDomain | None = None) -> GridField:
        """``base_q + amplitude * bump`` on the working (flat-frame) lattice."""
        dom = domain or self.domain
        bump = self.bump(amplitude)
        base = self.base_q

        def fn(x1, x2, x3):
            return base + bump(x1, x2, x3)

        if self.geometry == "a":
            return GridField.from_function(dom, fn)
        return transform_potential(self.kelvin, fn, dom)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a flat ``key = value`` file; ``overrides`` win over the file."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        text = Path(path).read_text()
        parser.read_string("[config]\n" + text)
        values.update(parser["config"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for key, raw in values.items():
        default = _FIELD_TYPES[key].default
        if isinstance(raw, str):
            low = raw.strip().lower()
            if low in ("none", ""):
                kw[key] = None
            elif isinstance(default, bool):
                kw[key] = low in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[key] = int(raw)
            elif isinstance(default, float) or key in ("gamma_exponent", "delta_tilde"):
                kw[key] = float(raw)
            else:
                kw[key] = raw.strip()
        else:
            kw[key] = raw
    return ExperimentConfig(**kw)


# --- records and fit --------------------------------------------------------

@dataclass
class StabilityRecord:
    t: float
    delta: float
    err_inf: float
    err_h1neg: float
    R: float
    tau: float
    eps: float
    wall_ms: float
    status: str = "ok"

    def row(self, timing: bool = False):
        vals = dataclasses.astuple(self)[:8]
        out = [repr(float(v)) for v in vals]
        if not timing:
            out[-1] = "nan"
        return out


@dataclass
class LogFit:
    C: float
    sigma: float
    residual: float
    dominating_C: float
    verdict: bool


def fit_log_model(records) -> tuple:
    """Least squares of ``log err`` on ``log |log delta|``.

    Returns ``(C, sigma, residual)`` with ``err ~ C |log delta|^-sigma`` and
    the root-mean-square log residual.
    """
    pts = [(r.delta, r.err_inf) if hasattr(r, "delta") else tuple(r) for r in records]
    pts = [(d, e) for d, e in pts if 0.0 < d < 1.0 and e > 0.0]
    if len(pts) < 3:
        raise ValueError("need at least 3 records with delta in (0, 1) and positive error")
    d, e = np.asarray(pts).T
    x = np.log(np.abs(np.log(d)))
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate spread: all deltas are equal")
    y = np.log(e)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    return float(np.exp(icpt)), float(-slope), float(np.sqrt(np.mean(resid ** 2)))


def log_law_verdict(records) -> LogFit:
    """Fit plus the smallest ``A`` with ``err <= A |log delta|^-sigma`` on every record."""
    c, sigma, res = fit_log_model(records)
    use = [r for r in records if 0.0 < r.delta < 1.0 and r.err_inf > 0.0]
    a = max(r.err_inf * abs(math.log(r.delta)) ** sigma for r in use)
    return LogFit(c, sigma, res, float(a), bool(sigma > 0.0 and np.isfinite(a)))


@dataclass
class SweepResult:
    records: list
    fit: LogFit | None
    monotone: bool
    failures: list = field(default_factory=list)


def _schedule_columns(delta: float, cfg: ExperimentConfig):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = make_schedule(max(delta, DELTA_FLOOR), cfg.alpha, gamma_exponent=cfg.gamma_exponent,
                          r0=cfg.r0, delta_tilde=cfg.delta_tilde)
    return s.freq_radius, s.tau, s.eps


def run_stability_sweep(cfg: ExperimentConfig, out: Path | None = None) -> SweepResult:
    """Distance between DtN maps and between potentials along the ladder.

    Rungs run concurrently; a failing rung is logged and skipped.  Records
    are reduced in ladder order, so the output does not depend on
    scheduling.
    """
    dom = cfg.domain
    basis = TraceBasis(dom, cfg.modes)
    q1 = cfg.potential(0.0)
    d1 = ForwardSolver(dom, q=q1).dtn(basis)
    if out is not None:
        (out / "fields").mkdir(parents=True, exist_ok=True)
        write_gridfield(out / "fields" / "q_base.cgf", q1)
        write_dtn(out / "fields" / "dtn_base.dtn", d1)

    def rung(item):
        idx, t = item
        start = time.perf_counter()
        q2 = cfg.potential(t)
        d2 = ForwardSolver(dom, q=q2).dtn(basis)
        delta = operator_norm(d1 - d2)
        diff = q1.with_values(q1.values - q2.values)
        rec = StabilityRecord(t, delta, diff.norm_inf(), h_minus1_norm(diff),
                              *_schedule_columns(delta, cfg), 0.0)
        rec.wall_ms = 1e3 * (time.perf_counter() - start)
        if out is not None:
            write_gridfield(out / "fields" / f"q_rung{idx}.cgf", q2)
            write_dtn(out / "fields" / f"dtn_rung{idx}.dtn", d2)
        return rec

    def guarded(item):
        try:
            return rung(item)
        except CalderonLabError as exc:
            log.warning("rung t=%g skipped: %s", item[1], exc)
            return StabilityRecord(item[1], *([math.nan] * 7), status=f"{type(exc).__name__}: {exc}")

    items = list(enumerate(cfg.amplitudes))
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(guarded, items))
    ok = [r for r in results if r.status == "ok"]
    failures = [r for r in results if r.status != "ok"]
    deltas = [r.delta for r in ok]
    monotone = all(b < a for a, b in zip(deltas, deltas[1:]))
    try:
        fit = log_law_verdict(ok)
    except ValueError as exc:
        log.warning("log-law fit skipped: %s", exc)
        fit = None
    res = SweepResult(results, fit, monotone, failures)
    if out is not None:
        write_records(out, res, cfg.record_timing)
    return res


def write_records(out: Path, res: SweepResult, timing: bool = False) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in res.records:
            w.writerow(r.row(timing))
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "wall_ms", "status"))
        for r in res.records:
            w.writerow((repr(r.t), f"{r.wall_ms:.3f}", r.status))
    rows = [("monotone", res.monotone)]
    if res.fit is not None:
        rows += [(k, repr(v)) for k, v in dataclasses.asdict(res.fit).items()]
    write_summary(out / "fit.csv", rows)


def write_summary(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("key", "value"))
        for k, v in rows:
            w.writerow((k, v))


def replay_record(domain: BoxDomain, basis: TraceBasis, base_path, rung_path) -> tuple:
    """Recompute ``(delta, err_inf, err_h1neg)`` from two persisted fields."""
    from .domain import read_gridfield
    q1 = read_gridfield(base_path, domain)
    q2 = read_gridfield(rung_path, domain)
    delta = operator_norm(ForwardSolver(domain, q=q1).dtn(basis) - ForwardSolver(domain, q=q2).dtn(basis))
    diff = q1.with_values(q1.values - q2.values)
    return delta, diff.norm_inf(), h_minus1_norm(diff)


# --- recovery demo --------------------------------------------------------------

@dataclass
class RecoveryReport:
    rows: list
    results: dict
    coverage: float | None


def run_recovery_demo(cfg: ExperimentConfig, out: Path | None = None, modes=None) -> RecoveryReport:
    """Recover ``q1 - q2`` on the working box for every radius in ``freq_radii``.

    ``modes`` defaults to ``(cfg.mode,)``.  The CGO parameter is the fixed
    override ``cfg.tau``; see :func:`recover_q0`.
    """
    modes = tuple(modes or (cfg.mode,))
    dom = cfg.domain
    q1 = cfg.potential(cfg.amplitudes[0])
    q2 = cfg.potential(0.0)
    s1 = ForwardSolver(dom, q=q1)
    s2 = ForwardSolver(dom, q=q2)
    basis = TraceBasis(dom, cfg.modes)
    D = s1.dtn(basis) - s2.dtn(basis)
    delta = operator_norm(D)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sched = make_schedule(max(delta, DELTA_FLOOR), cfg.alpha, gamma_exponent=cfg.gamma_exponent,
                              r0=cfg.r0, delta_tilde=cfg.delta_tilde)
    q0 = q1.with_values(q1.values - q2.values)
    rows, results, hits, total = [], {}, 0, 0
    mode_rows = []
    for mode in modes:
        for radius in cfg.freq_radii:
            sc = dataclasses.replace(sched, freq_radius=float(radius))
            res = recover_q0(D, sc, q1, q2, mode=mode, tau=cfg.tau, workers=cfg.workers)
            results[(mode, radius)] = res
            rows.append(dict(mode=mode, R=radius, tau=res.tau, rel_error=res.rel_error,
                             baseline=res.baseline, imag_residue=res.imag_residue,
                             modes=len(res.estimates)))
            for est in res.estimates:
                r = est.row()
                r.update(R=radius)
                mode_rows.append(r)
                if mode == "blind":
                    # the demo knows q0, so the blind interval can be scored against the truth
                    total += 1
                    miss = abs(est.estimate - even_transform(q0, est.xi))
                    hits += int(miss <= est.radius * (1 + 1e-12))
    coverage = hits / total if total else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_dicts(out / "recovery.csv", rows)
        _write_dicts(out / "modes.csv", mode_rows)
        for (mode, radius), res in results.items():
            write_gridfield(out / f"q0_hat_{mode}_R{radius:g}.cgf", res.q0_hat)
    return RecoveryReport(rows, results, coverage)


def _write_dicts(path: Path, rows) -> None:
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# --- other demos -------------------------------------------------------------------

def run_forward(cfg: ExperimentConfig, out: Path | None = None):
    """Solve with the first trace-basis mode as data; reports flux and eigenvalue."""
    dom = cfg.domain
    q = cfg.potential(cfg.amplitudes[0])
    solver = ForwardSolver(dom, q=q)
    basis = TraceBasis(dom, cfg.modes)
    f = basis.mode(0)
    u = solver.solve(f, homogeneous_on_gamma0=True)
    flux = solver.flux(u)
    rows = [("eigenvalue", repr(float(np.real(solver.eigenvalue)))),
            ("energy", repr(float(np.dot(flux, f.values)))),
            ("u_max", repr(u.norm_inf()))]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_gridfield(out / "q.cgf", q)
        write_gridfield(out / "u.cgf", u)
        write_summary(out / "summary.csv", rows)
    return u, rows


def run_dtn(cfg: ExperimentConfig, out: Path | None = None):
    dom = cfg.domain
    q = cfg.potential(cfg.amplitudes[0])
    d = ForwardSolver(dom, q=q).dtn(TraceBasis(dom, cfg.modes))
    rows = [("size", d.size), ("symmetry_defect", repr(d.symmetry_defect())),
            ("operator_norm", repr(operator_norm(d)))]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_dtn(out / "dtn.dtn", d)
        write_gridfield(out / "q.cgf", q)
        write_summary(out / "summary.csv", rows)
    return d, rows


def run_cgo(cfg: ExperimentConfig, out: Path | None = None):
    from .domain import even_reflect
    dom = cfg.domain
    q1 = even_reflect(cfg.potential(cfg.amplitudes[0]))
    q2 = even_reflect(cfg.potential(0.0))
    pair = assemble_pair(q1, q2, np.asarray(cfg.xi), cfg.tau)
    rows = sorted((k, repr(v)) for k, v in pair.residual_report.items())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_gridfield(out / "v1.cgf", pair.on_box(dom)[0])
        write_gridfield(out / "v2.cgf", pair.on_box(dom)[1])
        write_summary(out / "summary.csv", rows)
    return pair, rows


def run_kelvin_demo(cfg: ExperimentConfig, out: Path | None = None):
    """Original-side versus transformed-side DtN differences along the ladder.

    Always uses the inversion geometry regardless of ``cfg.geometry``.
    """
    kcfg = dataclasses.replace(cfg, geometry="b")
    km = kcfg.kelvin
    flat = kcfg.domain
    basis = TraceBasis(flat, cfg.modes)
    base = kcfg.base_q
    rows = []
    for t in cfg.amplitudes:
        bump = kcfg.bump(t)
        rep = compare_dtn_norms(km, flat, lambda a, b, c: base + 0 * a,
                                lambda a, b, c, bump=bump: base + bump(a, b, c), basis)
        rows.append(dict(t=t, sphere_norm=rep.sphere_norm, plane_norm=rep.plane_norm,
                         ratio=rep.ratio, pairing_rel_error=rep.pairing_rel_error))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_dicts(out / "kelvin.csv", rows)
        write_gridfield(out / "q_tilde.cgf", kcfg.potential(cfg.amplitudes[0]))
    return rows


def run_conductivity_demo(cfg: ExperimentConfig, out: Path | None = None):
    """Norm transfer for ``gamma = 1 + t * bump`` (flat at the accessible faces)."""
    dom = cfg.domain
    bump = GridField.from_function(dom, cfg.bump(1.0))
    gamma1 = GridField.from_function(dom, lambda a, b, c: np.ones_like(a))
    rep = perturbation_family(gamma1, bump, [t * 0.1 for t in cfg.amplitudes], TraceBasis(dom, cfg.modes))
    rows = rep.rows()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_dicts(out / "conductivity.csv", rows)
        write_summary(out / "fit.csv", [("C", repr(rep.C)), ("qg_C", repr(rep.qg_C)),
                                        ("qg_sigma", repr(rep.qg_sigma))])
        write_gridfield(out / "q_gamma.cgf",
                        gamma_to_q(gamma1.with_values(gamma1.values + 0.1 * cfg.amplitudes[0] * bump.values)))
    return rep


def run_case_b_recovery(cfg: ExperimentConfig, q1_fn, q2_fn, radius: float):
    """Inversion-geometry recovery: transform both potentials, then the flat-box pipeline."""
    km = cfg.kelvin
    flat = cfg.domain
    basis = TraceBasis(flat, cfg.modes)

    def flat_run(q1t, q2t):
        return flat_recovery(q1t, q2t, basis, radius, cfg)

    return kelvin_pipeline(km, flat, q1_fn, q2_fn, flat_run)


def flat_recovery(q1: GridField, q2: GridField, basis: TraceBasis, radius: float, cfg: ExperimentConfig):
    """Flat-box recovery of ``q1 - q2`` at a fixed frequency radius and ``cfg.tau``."""
    if q1.domain != basis.domain:
        raise LatticeError("potential and basis lattices differ")
    D = ForwardSolver(q1.domain, q=q1).dtn(basis) - ForwardSolver(q2.domain, q=q2).dtn(basis)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sched = make_schedule(max(operator_norm(D), DELTA_FLOOR), cfg.alpha, r0=radius)
    sched = dataclasses.replace(sched, freq_radius=float(radius))
    return recover_q0(D, sched, q1, q2, mode=cfg.mode, tau=cfg.tau, workers=cfg.workers)
