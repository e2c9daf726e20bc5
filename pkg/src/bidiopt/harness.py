"""Experiment orchestration: grid sweeps, trace emission, manifests, SVG plots."""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, fields
from importlib import resources
from typing import Optional

import numpy as np

from .accounting import select_params_realistic
from .algorithms import (
    AdianaParams,
    AgdParams,
    Ef21pDianaParams,
    GdParams,
    RunConfig,
    Trace,
    TwoDirectionParams,
    run,
)
from .compressors import CompressorSpec, alpha_of, omega_of
from .problems import (
    LogRegProblem,
    QuadraticSpec,
    load_dataset,
    make_logreg,
    make_quadratic,
)
from .schedule import ScheduleParams, default_gamma0, lbar_theory

__all__ = [
    "ExperimentConfig",
    "config_hash",
    "build_problem",
    "build_params",
    "run_experiment",
    "best_of",
    "emit_plot",
    "write_manifest",
    "read_manifest",
    "toy_dataset_path",
]

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment deterministically."""

    algo: str
    out: str
    problem: str = "quadratic"      # quadratic | logreg
    dataset: str = "toy"            # path or the bundled "toy" set
    scheme: str = "contiguous"
    n: int = 4
    kw: int = 0                     # 0 means dim // 3
    ka: int = 0
    r: float = 0.5
    mode: str = "tuned"             # theory | tuned
    grid_lo: int = 0
    grid_hi: int = 0
    rounds: Optional[int] = 200
    budget_coords: Optional[float] = None
    eps: Optional[float] = None
    seed: int = 0
    dim: int = 20                   # quadratic-only fields
    quad_mu: float = 0.1
    quad_L: float = 10.0
    l2: float = 0.0

    def __post_init__(self):
        if self.mode not in ("theory", "tuned"):
            raise ValueError("mode must be theory or tuned")
        if not -20 <= self.grid_lo <= self.grid_hi <= 20:
            raise ValueError("grid exponents must satisfy -20 <= lo <= hi <= 20")
        for name in ("rounds", "budget_coords", "eps"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")


def config_hash(config: ExperimentConfig) -> str:
    payload = ";".join(f"{f.name}={getattr(config, f.name)!r}" for f in fields(config))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def toy_dataset_path() -> str:
    return str(resources.files("bidiopt").joinpath("data/toy_multiclass.libsvm"))


def build_problem(config: ExperimentConfig):
    if config.problem == "quadratic":
        spec = QuadraticSpec(dim=config.dim, n=config.n, mu=config.quad_mu,
                             L=config.quad_L, seed=config.seed)
        return make_quadratic(spec)
    if config.problem == "logreg":
        path = toy_dataset_path() if config.dataset == "toy" else config.dataset
        ds = load_dataset(path)
        return make_logreg(ds, config.n, config.scheme, l2=config.l2)
    raise ValueError(f"unknown problem kind {config.problem!r}")


def _grid(config: ExperimentConfig):
    if config.mode == "theory":
        return [None]
    return list(range(config.grid_lo, config.grid_hi + 1))


def build_params(config: ExperimentConfig, problem, exponent: Optional[int]):
    """Algorithm parameters for one grid point (exponent None = theory mode)."""
    consts = problem.constants
    d = problem.dim
    kw = config.kw if config.kw else max(1, d // 3)
    ka = config.ka if config.ka else max(1, d // 3)
    scale = 1.0 if exponent is None else 2.0 ** exponent

    if config.algo == "gd":
        return GdParams(gamma=scale / consts.L)
    if config.algo == "agd":
        return AgdParams(L=consts.L / scale, mu=consts.mu)

    dual = CompressorSpec.make_rand_k(d, kw)
    omega = omega_of(dual)
    beta = 1.0 / (omega + 1.0)
    if config.algo == "ef21p_diana":
        primal = CompressorSpec.make_top_k(d, ka)
        return Ef21pDianaParams(dual=dual, primal=primal, gamma=scale / consts.L, beta=beta)

    if config.algo == "2direction":
        primal = CompressorSpec.make_top_k(d, ka)
        alpha = alpha_of(primal)
    elif config.algo == "adiana":
        primal = None
        alpha = 1.0
    else:
        raise ValueError(f"unknown algorithm {config.algo!r}")

    choice = select_params_realistic(omega, kw, ka, d, config.r)
    if exponent is None:
        lbar = lbar_theory(consts.L, consts.L_max, omega, alpha, choice.tau,
                           choice.p, beta, problem.n)
    else:
        lbar = scale * consts.L
    sched = ScheduleParams(lbar=lbar, mu=consts.mu, p=choice.p, alpha=alpha,
                           tau=choice.tau, beta=beta,
                           gamma0=default_gamma0(lbar, consts.L, consts.mu))
    if config.algo == "2direction":
        return TwoDirectionParams(dual=dual, primal=primal, schedule=sched)
    return AdianaParams(dual=dual, schedule=sched)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(path: str, config: ExperimentConfig, extras: dict) -> None:
    lines = [f"config_hash={config_hash(config)}"]
    for f in fields(config):
        lines.append(f"{f.name}={getattr(config, f.name)!r}")
    for key in sorted(extras):
        lines.append(f"{key}={extras[key]!r}")
    _atomic_write(path, "\n".join(lines) + "\n")


def read_manifest(path: str) -> tuple[ExperimentConfig, dict]:
    """Parse a manifest back into its config and extras; hash must re-verify."""
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            values[key] = raw
    stored_hash = values.pop("config_hash")
    names = {f.name for f in fields(ExperimentConfig)}
    kwargs = {}
    import ast

    extras = {}
    for key, raw in values.items():
        parsed = ast.literal_eval(raw)
        if key in names:
            kwargs[key] = parsed
        else:
            extras[key] = parsed
    config = ExperimentConfig(**kwargs)
    if config_hash(config) != stored_hash:
        raise ValueError("manifest hash mismatch after round-trip")
    return config, extras


def run_experiment(config: ExperimentConfig) -> dict:
    """Run the configured sweep; emit one CSV per grid point plus a manifest.

    Returns {"traces": [(exponent, path, Trace)], "manifest": path, ...}.
    """
    problem = build_problem(config)
    consts = problem.constants
    if isinstance(problem, LogRegProblem):
        f_star = problem.reference_solution()[1]
    else:
        f_star = problem.f_star

    os.makedirs(config.out, exist_ok=True)
    results = []
    for exponent in _grid(config):
        params = build_params(config, problem, exponent)
        rc = RunConfig(rounds=config.rounds, coord_budget=config.budget_coords,
                       eps=config.eps, r=config.r, seed=config.seed, f_star=f_star)
        trace = run(config.algo, problem, params, rc)
        tag = "theory" if exponent is None else f"2p{exponent}"
        trace.meta.update({"exponent": 0 if exponent is None else exponent,
                           "algo": config.algo, "tag": tag})
        path = os.path.join(config.out, f"{config.algo}_{tag}.csv")
        tmp = path + ".tmp"
        trace.to_csv(tmp)
        os.replace(tmp, path)
        results.append((exponent, path, trace))

    d = problem.dim
    extras = {
        "f_star": float(f_star),
        "L": consts.L,
        "L_max": consts.L_max,
        "Lhat_bound": consts.Lhat_bound,
        "mu": consts.mu,
        "dim_actual": d,
        "kw_actual": config.kw if config.kw else max(1, d // 3),
        "ka_actual": config.ka if config.ka else max(1, d // 3),
        "files": [os.path.basename(p) for _, p, _ in results],
    }
    if config.algo in ("2direction", "adiana"):
        kw = extras["kw_actual"]
        ka = extras["ka_actual"]
        choice = select_params_realistic(d / kw - 1.0, kw, ka, d, config.r)
        extras["p"] = choice.p
        extras["tau"] = choice.tau
    manifest = os.path.join(config.out, f"{config.algo}_manifest.txt")
    write_manifest(manifest, config, extras)
    try:
        emit_plot([t for _, _, t in results], os.path.join(config.out, f"{config.algo}_plot.svg"))
    except ValueError:
        pass  # all traces empty/NaN
    return {"traces": results, "manifest": manifest, "f_star": f_star, "problem": problem}


def best_of(traces: list, eps: float, r: float):
    """Index of the trace reaching f_gap <= eps with the fewest r-weighted coords.

    Ties go to the smaller grid exponent; returns None if no trace reaches eps.
    """
    if not traces:
        raise ValueError("need at least one trace")
    best_idx = None
    best_cost = math.inf
    best_exp = None
    for idx, trace in enumerate(traces):
        hits = np.flatnonzero(trace.f_gap <= eps)
        if hits.size == 0:
            continue
        first = hits[0]
        cost = (1.0 - r) * trace.w2s_cum[first] + r * trace.s2w_cum[first]
        exp = trace.meta.get("exponent", 0)
        if cost < best_cost or (cost == best_cost and (best_exp is None or exp < best_exp)):
            best_idx, best_cost, best_exp = idx, cost, exp
    return best_idx


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def emit_plot(traces: list, path: str, floor: float = 1e-16) -> str:
    """Standalone SVG: one polyline per trace, x = r-weighted coords, log10-y gap."""
    if not traces:
        raise ValueError("need at least one trace")
    usable = []
    for trace in traces:
        if np.all(~np.isfinite(trace.f_gap)):
            warnings.warn(f"skipping all-NaN trace {trace.meta.get('tag', '?')}")
            continue
        usable.append(trace)
    if not usable:
        raise ValueError("every trace was NaN")

    width, height = 800.0, 500.0
    ml, mr, mt, mb = 70.0, 170.0, 20.0, 45.0
    xs_all = np.concatenate([t.total_r for t in usable])
    ys_all = np.concatenate([np.log10(np.maximum(t.f_gap, floor)) for t in usable])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr)

    def sy(y):
        return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:g}" height="{height:g}" viewBox="0 0 {width:g} {height:g}">',
        f'<rect width="{width:g}" height="{height:g}" fill="white"/>',
        f'<line x1="{ml:g}" y1="{height - mb:g}" x2="{width - mr:g}" y2="{height - mb:g}" stroke="black"/>',
        f'<line x1="{ml:g}" y1="{mt:g}" x2="{ml:g}" y2="{height - mb:g}" stroke="black"/>',
        f'<text x="{(ml + width - mr) / 2:g}" y="{height - 8:g}" font-size="13" '
        f'text-anchor="middle">transmitted coordinates (r-weighted)</text>',
        f'<text x="14" y="{(mt + height - mb) / 2:g}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 14 {(mt + height - mb) / 2:g})">log10 f-gap</text>',
        f'<text x="{ml:g}" y="{height - mb + 16:g}" font-size="11" text-anchor="middle">{x_lo:.3g}</text>',
        f'<text x="{width - mr:g}" y="{height - mb + 16:g}" font-size="11" text-anchor="middle">{x_hi:.3g}</text>',
        f'<text x="{ml - 6:g}" y="{height - mb:g}" font-size="11" text-anchor="end">{y_lo:.3g}</text>',
        f'<text x="{ml - 6:g}" y="{mt + 10:g}" font-size="11" text-anchor="end">{y_hi:.3g}</text>',
    ]
    for j, trace in enumerate(usable):
        color = _PALETTE[j % len(_PALETTE)]
        ys = np.log10(np.maximum(trace.f_gap, floor))
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(trace.total_r, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        label = f"{trace.meta.get('algo', trace.algo)} {trace.meta.get('tag', '')}".strip()
        ly = mt + 16 + 16 * j
        parts.append(f'<line x1="{width - mr + 8:g}" y1="{ly - 4:g}" x2="{width - mr + 28:g}" '
                     f'y2="{ly - 4:g}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - mr + 33:g}" y="{ly:g}" font-size="12">{label}</text>')
    parts.append("</svg>")
    _atomic_write(path, "\n".join(parts) + "\n")
    return path
