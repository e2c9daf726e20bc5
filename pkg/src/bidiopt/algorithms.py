"""Optimizer state machines with exact communication charging.

Implements the bidirectional accelerated method (worker RandK-style dual
compression, server contractive primal compression, coin-gated uncompressed
broadcasts), its uplink-only accelerated ancestor, the non-accelerated
error-feedback + shifted-gradient baseline, and plain GD/AGD.  Every step is
a deterministic transaction: given the state, the keyed RNG stream and the
coin, the next state is reproducible bit for bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .accounting import CommLedger
from .compressors import (
    PURPOSE_PRIMAL,
    PURPOSE_Y,
    PURPOSE_Z,
    CompressorSpec,
    RngStream,
    apply_compressor,
    expected_density,
    omega_of,
)
from .problems import DistributedProblem, mean_in_index_order
from .schedule import ScheduleParams, calc_learning_rates

__all__ = [
    "TwoDirectionParams",
    "TwoDirectionState",
    "AdianaParams",
    "AdianaState",
    "Ef21pDianaParams",
    "Ef21pDianaState",
    "GdParams",
    "AgdParams",
    "GdState",
    "AgdState",
    "init_2direction",
    "step_2direction",
    "init_adiana",
    "step_adiana",
    "init_ef21p_diana",
    "step_ef21p_diana",
    "step_gd",
    "step_agd",
    "RunConfig",
    "Trace",
    "run",
    "ALGORITHMS",
]

ALGORITHMS = ("2direction", "adiana", "ef21p_diana", "gd", "agd")


def _map_workers(fn, n: int) -> None:
    """Apply fn(i) for workers 0..n-1, optionally in threads.

    Results are written into index-addressed slots by fn, so the reduction
    order (always ascending index) does not depend on scheduling.
    """
    threads = int(os.environ.get("BIDIOPT_THREADS", "1"))
    if threads <= 1 or n == 1:
        for i in range(n):
            fn(i)
    else:
        with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
            list(pool.map(fn, range(n)))


def _prox(g: np.ndarray, center: np.ndarray, y: np.ndarray, gamma: float,
          gamma_big: float, lbar: float, mu: float) -> np.ndarray:
    """Closed form of argmin_x <g, x> + (lbar+Gamma*mu)/(2 gamma) ||x-center||^2 + mu/2 ||x-y||^2."""
    a = lbar + gamma_big * mu
    denom = a + gamma * mu
    return (a * center + (mu * gamma) * y - gamma * g) / denom


# ---------------------------------------------------------------------------
# bidirectional accelerated method


@dataclass(frozen=True)
class TwoDirectionParams:
    dual: CompressorSpec
    primal: CompressorSpec
    schedule: ScheduleParams

    def __post_init__(self):
        limit = 1.0 / (omega_of(self.dual) + 1.0)
        if self.schedule.beta > limit * (1 + 1e-12):
            raise ValueError(f"beta={self.schedule.beta} exceeds 1/(omega+1)={limit}")


@dataclass
class TwoDirectionState:
    t: int
    gamma_big: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    w: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    h_i: np.ndarray          # (n, d) worker shifts
    h: np.ndarray            # server copy of their mean
    worker_w: np.ndarray     # (n, d) worker replicas of w
    worker_z: np.ndarray
    worker_k: np.ndarray
    stream: RngStream
    coin: bool = False
    theta: float = 0.0
    gamma: float = 0.0


def init_2direction(problem: DistributedProblem, params: TwoDirectionParams,
                    stream: RngStream, ledger: CommLedger,
                    x0: Optional[np.ndarray] = None) -> TwoDirectionState:
    """Initial state; workers upload raw gradients, server broadcasts the start point."""
    n, d = problem.n, problem.dim
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    h_i = np.empty((n, d))

    def fill(i):
        h_i[i] = problem.grad_worker(i, x)

    _map_workers(fill, n)
    h = mean_in_index_order(list(h_i))
    ledger.charge_w2s_all(d)
    ledger.charge_s2w(d)
    return TwoDirectionState(
        t=0, gamma_big=params.schedule.gamma0,
        x=x, y=x.copy(), z=x.copy(), u=x.copy(), w=x.copy(), q=x.copy(),
        k=h.copy(), v=h.copy(), h_i=h_i, h=h,
        worker_w=np.tile(x, (n, 1)), worker_z=np.tile(x, (n, 1)),
        worker_k=np.tile(h, (n, 1)), stream=stream,
    )


def step_2direction(state: TwoDirectionState, problem: DistributedProblem,
                    params: TwoDirectionParams, ledger: CommLedger,
                    coin: Optional[bool] = None) -> TwoDirectionState:
    """One full round.

    Workers compress y-shifted gradients; the server takes the accelerated
    prox step for u, mirrors it from (w, k) to get q, ships the compressed
    difference so everyone can rebuild w; a Bernoulli(p) coin decides whether
    (x, k) are broadcast uncompressed and z jumps to x; workers then compress
    z-shifted gradients to refresh the shifts and the gradient learner v.
    """
    sch = params.schedule
    n, d = problem.n, problem.dim
    t = state.t
    gamma_next, gamma, theta = calc_learning_rates(state.gamma_big, sch)
    kw = expected_density(params.dual)
    ka = expected_density(params.primal)

    # workers: momentum point and y-messages
    ys = theta * state.worker_w + (1.0 - theta) * state.worker_z
    m_y = np.empty((n, d))

    def upload_y(i):
        g_i = problem.grad_worker(i, ys[i])
        m_y[i] = apply_compressor(params.dual, g_i - state.h_i[i],
                                  state.stream.generator(i, t, PURPOSE_Y))

    _map_workers(upload_y, n)
    ledger.charge_w2s_all(kw)

    # server: gradient estimate, prox steps, compressed model correction
    y = theta * state.w + (1.0 - theta) * state.z
    g = state.h + mean_in_index_order(list(m_y))
    u_next = _prox(g, state.u, y, gamma, state.gamma_big, sch.lbar, sch.mu)
    q_next = _prox(state.k, state.w, y, gamma, state.gamma_big, sch.lbar, sch.mu)
    p_vec = apply_compressor(params.primal, u_next - q_next,
                             state.stream.generator(n, t, PURPOSE_PRIMAL))
    w_next = q_next + p_vec
    x_next = theta * u_next + (1.0 - theta) * state.z
    ledger.charge_s2w(ka)

    if coin is None:
        coin = state.stream.coin(t, sch.p, server_id=n)
    if coin:
        k_next = state.v.copy()
        z_next = x_next.copy()
        ledger.charge_s2w(2 * d)
    else:
        k_next = state.k.copy()
        z_next = state.z.copy()

    # workers: replica recomputation of (q, w), z bookkeeping, z-messages
    m_z = np.empty((n, d))
    worker_w_next = np.empty((n, d))
    worker_z_next = np.empty((n, d))
    worker_k_next = np.empty((n, d))
    h_i_next = np.empty((n, d))

    def upload_z(i):
        q_i = _prox(state.worker_k[i], state.worker_w[i], ys[i], gamma,
                    state.gamma_big, sch.lbar, sch.mu)
        worker_w_next[i] = q_i + p_vec
        worker_z_next[i] = x_next if coin else state.worker_z[i]
        worker_k_next[i] = k_next if coin else state.worker_k[i]
        gz_i = problem.grad_worker(i, worker_z_next[i])
        m_z[i] = apply_compressor(params.dual, gz_i - state.h_i[i],
                                  state.stream.generator(i, t, PURPOSE_Z))
        h_i_next[i] = state.h_i[i] + sch.beta * m_z[i]

    _map_workers(upload_z, n)
    ledger.charge_w2s_all(kw)

    mz_mean = mean_in_index_order(list(m_z))
    v_next = (1.0 - sch.tau) * state.v + sch.tau * (state.h + mz_mean)
    h_next = state.h + sch.beta * mz_mean

    return TwoDirectionState(
        t=t + 1, gamma_big=gamma_next, x=x_next, y=y, z=z_next, u=u_next,
        w=w_next, q=q_next, k=k_next, v=v_next, h_i=h_i_next, h=h_next,
        worker_w=worker_w_next, worker_z=worker_z_next, worker_k=worker_k_next,
        stream=state.stream, coin=bool(coin), theta=theta, gamma=gamma,
    )


# ---------------------------------------------------------------------------
# uplink-only accelerated baseline


@dataclass(frozen=True)
class AdianaParams:
    dual: CompressorSpec
    schedule: ScheduleParams


@dataclass
class AdianaState:
    t: int
    gamma_big: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    h_i: np.ndarray
    h: np.ndarray
    stream: RngStream
    coin: bool = False
    theta: float = 0.0
    gamma: float = 0.0


def init_adiana(problem: DistributedProblem, params: AdianaParams,
                stream: RngStream, ledger: CommLedger,
                x0: Optional[np.ndarray] = None) -> AdianaState:
    n, d = problem.n, problem.dim
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    h_i = np.empty((n, d))

    def fill(i):
        h_i[i] = problem.grad_worker(i, x)

    _map_workers(fill, n)
    h = mean_in_index_order(list(h_i))
    ledger.charge_w2s_all(d)
    ledger.charge_s2w(d)
    return AdianaState(t=0, gamma_big=params.schedule.gamma0, x=x, y=x.copy(),
                       z=x.copy(), u=x.copy(), h_i=h_i, h=h, stream=stream)


def step_adiana(state: AdianaState, problem: DistributedProblem,
                params: AdianaParams, ledger: CommLedger,
                coin: Optional[bool] = None) -> AdianaState:
    """One round: same dual compression and prox step, uncompressed u broadcast."""
    sch = params.schedule
    n, d = problem.n, problem.dim
    t = state.t
    gamma_next, gamma, theta = calc_learning_rates(state.gamma_big, sch)
    kw = expected_density(params.dual)

    y = theta * state.u + (1.0 - theta) * state.z
    m_y = np.empty((n, d))

    def upload_y(i):
        g_i = problem.grad_worker(i, y)
        m_y[i] = apply_compressor(params.dual, g_i - state.h_i[i],
                                  state.stream.generator(i, t, PURPOSE_Y))

    _map_workers(upload_y, n)
    ledger.charge_w2s_all(kw)

    g = state.h + mean_in_index_order(list(m_y))
    u_next = _prox(g, state.u, y, gamma, state.gamma_big, sch.lbar, sch.mu)
    if coin is None:
        coin = state.stream.coin(t, sch.p, server_id=n)
    ledger.charge_s2w(d)  # uncompressed broadcast of u every round

    x_next = theta * u_next + (1.0 - theta) * state.z
    z_next = x_next.copy() if coin else state.z.copy()

    m_z = np.empty((n, d))
    h_i_next = np.empty((n, d))

    def upload_z(i):
        gz_i = problem.grad_worker(i, z_next)
        m_z[i] = apply_compressor(params.dual, gz_i - state.h_i[i],
                                  state.stream.generator(i, t, PURPOSE_Z))
        h_i_next[i] = state.h_i[i] + sch.beta * m_z[i]

    _map_workers(upload_z, n)
    ledger.charge_w2s_all(kw)
    h_next = state.h + sch.beta * mean_in_index_order(list(m_z))

    return AdianaState(t=t + 1, gamma_big=gamma_next, x=x_next, y=y, z=z_next,
                       u=u_next, h_i=h_i_next, h=h_next, stream=state.stream,
                       coin=bool(coin), theta=theta, gamma=gamma)


# ---------------------------------------------------------------------------
# non-accelerated error-feedback baseline


@dataclass(frozen=True)
class Ef21pDianaParams:
    dual: CompressorSpec
    primal: CompressorSpec
    gamma: float
    beta: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("stepsize gamma must be positive")
        limit = 1.0 / (omega_of(self.dual) + 1.0)
        if not 0 < self.beta <= limit * (1 + 1e-12):
            raise ValueError(f"beta must lie in (0, {limit}]")


@dataclass
class Ef21pDianaState:
    t: int
    u: np.ndarray
    w: np.ndarray
    h_i: np.ndarray
    h: np.ndarray
    worker_w: np.ndarray
    stream: RngStream


def init_ef21p_diana(problem: DistributedProblem, params: Ef21pDianaParams,
                     stream: RngStream, ledger: CommLedger,
                     x0: Optional[np.ndarray] = None) -> Ef21pDianaState:
    n, d = problem.n, problem.dim
    u = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    h_i = np.empty((n, d))

    def fill(i):
        h_i[i] = problem.grad_worker(i, u)

    _map_workers(fill, n)
    h = mean_in_index_order(list(h_i))
    ledger.charge_w2s_all(d)
    ledger.charge_s2w(d)
    return Ef21pDianaState(t=0, u=u, w=u.copy(), h_i=h_i, h=h,
                           worker_w=np.tile(u, (n, 1)), stream=stream)


def step_ef21p_diana(state: Ef21pDianaState, problem: DistributedProblem,
                     params: Ef21pDianaParams, ledger: CommLedger) -> Ef21pDianaState:
    """One round: shifted-gradient uplink, gradient step on u, compressed model correction."""
    n, d = problem.n, problem.dim
    t = state.t
    kw = expected_density(params.dual)
    ka = expected_density(params.primal)

    m = np.empty((n, d))
    h_i_next = np.empty((n, d))

    def upload(i):
        g_i = problem.grad_worker(i, state.worker_w[i])
        m[i] = apply_compressor(params.dual, g_i - state.h_i[i],
                                state.stream.generator(i, t, PURPOSE_Y))
        h_i_next[i] = state.h_i[i] + params.beta * m[i]

    _map_workers(upload, n)
    ledger.charge_w2s_all(kw)

    m_mean = mean_in_index_order(list(m))
    g = state.h + m_mean
    h_next = state.h + params.beta * m_mean
    u_next = state.u - params.gamma * g
    p_vec = apply_compressor(params.primal, u_next - state.w,
                             state.stream.generator(n, t, PURPOSE_PRIMAL))
    w_next = state.w + p_vec
    ledger.charge_s2w(ka)
    worker_w_next = state.worker_w + p_vec

    return Ef21pDianaState(t=t + 1, u=u_next, w=w_next, h_i=h_i_next, h=h_next,
                           worker_w=worker_w_next, stream=state.stream)


# ---------------------------------------------------------------------------
# uncompressed baselines


@dataclass(frozen=True)
class GdParams:
    gamma: float


@dataclass(frozen=True)
class AgdParams:
    L: float
    mu: float


@dataclass
class GdState:
    t: int
    x: np.ndarray
    gamma: float


@dataclass
class AgdState:
    t: int
    x: np.ndarray
    y: np.ndarray
    L: float
    mu: float
    since_restart: int = 0


def step_gd(x: np.ndarray, problem: DistributedProblem, gamma: float,
            ledger: Optional[CommLedger] = None) -> np.ndarray:
    """Plain gradient step x - gamma * grad f(x); charges d in both directions."""
    g = problem.grad(x)
    if ledger is not None:
        ledger.charge_w2s_all(problem.dim)
        ledger.charge_s2w(problem.dim)
    return x - gamma * g


def step_agd(state: AgdState, problem: DistributedProblem,
             ledger: Optional[CommLedger] = None) -> AgdState:
    """Accelerated step: constant momentum when mu > 0, t/(t+3) extrapolation when mu = 0."""
    g = problem.grad(state.y)
    if ledger is not None:
        ledger.charge_w2s_all(problem.dim)
        ledger.charge_s2w(problem.dim)
    x_next = state.y - g / state.L
    if state.mu > 0:
        rl, rm = math.sqrt(state.L), math.sqrt(state.mu)
        beta = (rl - rm) / (rl + rm)
    else:
        beta = state.since_restart / (state.since_restart + 3.0)
    y_next = x_next + beta * (x_next - state.x)
    return AgdState(t=state.t + 1, x=x_next, y=y_next, L=state.L, mu=state.mu,
                    since_restart=state.since_restart + 1)


# ---------------------------------------------------------------------------
# run loop and traces


@dataclass
class RunConfig:
    """Stopping rules (combined by OR), direction weight, seed, gap reference."""

    rounds: Optional[int] = None
    coord_budget: Optional[float] = None
    eps: Optional[float] = None
    r: float = 0.5
    seed: int = 0
    f_star: Optional[float] = None
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rounds is None and self.coord_budget is None and self.eps is None:
            raise ValueError("need at least one stopping rule")


@dataclass
class Trace:
    """Per-round progress and exact communication counters."""

    algo: str
    rounds: np.ndarray
    f_gap: np.ndarray
    grad_norm: np.ndarray
    w2s_cum: np.ndarray
    s2w_cum: np.ndarray
    total_r: np.ndarray
    coin: np.ndarray
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    COLUMNS = ("round", "f_gap", "grad_norm", "w2s_cum", "s2w_cum", "total_r", "coin")

    def to_csv(self, path) -> None:
        lines = [",".join(self.COLUMNS)]
        for i in range(len(self.rounds)):
            lines.append(
                f"{int(self.rounds[i])},{float(self.f_gap[i])!r},{float(self.grad_norm[i])!r},"
                f"{int(self.w2s_cum[i])},{int(self.s2w_cum[i])},{float(self.total_r[i])!r},"
                f"{int(self.coin[i])}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def from_csv(path, algo: str = "") -> "Trace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != Trace.COLUMNS:
                raise ValueError(f"unexpected trace header {header}")
            raw = [line.strip().split(",") for line in fh if line.strip()]
        cols = list(zip(*raw)) if raw else [[] for _ in Trace.COLUMNS]
        return Trace(
            algo=algo,
            rounds=np.array([int(v) for v in cols[0]], dtype=np.int64),
            f_gap=np.array([float(v) for v in cols[1]]),
            grad_norm=np.array([float(v) for v in cols[2]]),
            w2s_cum=np.array([int(v) for v in cols[3]], dtype=np.int64),
            s2w_cum=np.array([int(v) for v in cols[4]], dtype=np.int64),
            total_r=np.array([float(v) for v in cols[5]]),
            coin=np.array([int(v) for v in cols[6]], dtype=np.int64),
        )


_INIT = {
    "2direction": init_2direction,
    "adiana": init_adiana,
    "ef21p_diana": init_ef21p_diana,
}


def _measured_point(algo: str, state) -> np.ndarray:
    if algo in ("2direction", "adiana"):
        return state.z
    if algo == "ef21p_diana":
        return state.u
    return state.x


def run(algo: str, problem: DistributedProblem, params, config: RunConfig) -> Trace:
    """Iterate until a stopping rule fires; returns the per-round trace.

    Deterministic for a fixed config: all randomness is drawn from counter
    streams keyed by config.seed.
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}")
    n = problem.n
    ledger = CommLedger(n, r=config.r)
    stream = RngStream(config.seed)
    f_star = config.f_star
    if f_star is None:
        f_star = problem.f_star

    if algo == "gd":
        state = GdState(t=0, x=(np.zeros(problem.dim) if config.x0 is None
                                else np.asarray(config.x0, dtype=float).copy()),
                        gamma=params.gamma)
    elif algo == "agd":
        x = np.zeros(problem.dim) if config.x0 is None else np.asarray(config.x0, dtype=float).copy()
        state = AgdState(t=0, x=x, y=x.copy(), L=params.L, mu=params.mu)
    else:
        state = _INIT[algo](problem, params, stream, ledger, x0=config.x0)

    rows = {name: [] for name in ("round", "f_gap", "grad_norm", "w2s", "s2w", "total", "coin")}
    diverged = False
    cached_eval = None

    def record(coin_flag: int) -> tuple[float, bool]:
        nonlocal cached_eval
        point = _measured_point(algo, state)
        reuse = algo in ("2direction", "adiana") and coin_flag == 0 and cached_eval is not None
        if reuse:
            gap, gn, finite = cached_eval
        else:
            f_val = problem.value(point)
            gap = f_val - f_star
            gn = float(np.linalg.norm(problem.grad(point)))
            finite = bool(np.isfinite(f_val) and np.isfinite(gn) and np.all(np.isfinite(point)))
            cached_eval = (gap, gn, finite)
        rows["round"].append(state.t)
        rows["f_gap"].append(gap)
        rows["grad_norm"].append(gn)
        rows["w2s"].append(ledger.w2s_per_worker())
        rows["s2w"].append(ledger.s2w)
        rows["total"].append(ledger.total_r())
        rows["coin"].append(coin_flag)
        return gap, finite

    gap, finite = record(0)
    while True:
        if not finite:
            diverged = True
            break
        if config.eps is not None and gap <= config.eps:
            break
        if config.coord_budget is not None and ledger.total_r() >= config.coord_budget:
            break
        if config.rounds is not None and state.t >= config.rounds:
            break
        if algo == "gd":
            state = GdState(t=state.t + 1, x=step_gd(state.x, problem, state.gamma, ledger),
                            gamma=state.gamma)
            coin_flag = 0
        elif algo == "agd":
            state = step_agd(state, problem, ledger)
            coin_flag = 0
        elif algo == "2direction":
            state = step_2direction(state, problem, params, ledger)
            coin_flag = int(state.coin)
        elif algo == "adiana":
            state = step_adiana(state, problem, params, ledger)
            coin_flag = int(state.coin)
        else:
            state = step_ef21p_diana(state, problem, params, ledger)
            coin_flag = 0
        gap, finite = record(coin_flag)

    return Trace(
        algo=algo,
        rounds=np.array(rows["round"], dtype=np.int64),
        f_gap=np.array(rows["f_gap"]),
        grad_norm=np.array(rows["grad_norm"]),
        w2s_cum=np.array(rows["w2s"], dtype=np.int64),
        s2w_cum=np.array(rows["s2w"], dtype=np.int64),
        total_r=np.array(rows["total"]),
        coin=np.array(rows["coin"], dtype=np.int64),
        diverged=diverged,
    )
