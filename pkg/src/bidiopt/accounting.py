"""Communication metering and the (p, tau) selection formulas.

Coordinates are the unit of charge (bit counts differ only by a constant
factor).  Uplink is accounted per worker; the r-weighted total is
(1 - r) * uplink + r * downlink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CommLedger",
    "ParamChoice",
    "downlink_uplink_ratio",
    "select_params_realistic",
    "select_params_optimistic",
    "rounds_realistic",
    "total_realistic",
    "total_ef21p_diana",
    "total_agd",
    "agd_coupling",
    "expected_ledger",
    "ef21_dominance_sweep",
    "agd_dominance_sweep",
]


class CommLedger:
    """Exact per-direction coordinate counters for one run."""

    def __init__(self, n: int, r: float = 0.5):
        if not 0.0 <= r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        self.n = n
        self.r = r
        self.w2s = np.zeros(n, dtype=np.int64)
        self.s2w = 0

    def charge_w2s(self, worker: int, coords: int) -> None:
        if coords < 0:
            raise ValueError("charge must be non-negative")
        self.w2s[worker] += coords

    def charge_w2s_all(self, coords: int) -> None:
        if coords < 0:
            raise ValueError("charge must be non-negative")
        self.w2s += coords

    def charge_s2w(self, coords: int) -> None:
        if coords < 0:
            raise ValueError("charge must be non-negative")
        self.s2w += coords

    def w2s_per_worker(self) -> int:
        """Uplink count of the busiest worker (all equal under symmetric charging)."""
        return int(self.w2s.max())

    def w2s_summed(self) -> int:
        return int(self.w2s.sum())

    def total_r(self, r: float | None = None, summed: bool = False) -> float:
        """r-weighted total: (1-r) * uplink + r * downlink."""
        r = self.r if r is None else r
        up = self.w2s_summed() if summed else self.w2s_per_worker()
        return (1.0 - r) * up + r * self.s2w

    def copy(self) -> "CommLedger":
        out = CommLedger(self.n, self.r)
        out.w2s = self.w2s.copy()
        out.s2w = self.s2w
        return out


@dataclass(frozen=True)
class ParamChoice:
    """Chosen coin probability and momentum, with their provenance."""

    p: float
    tau: float
    provenance: str
    mu_r: float


def downlink_uplink_ratio(d: int, k_omega: float, k_alpha: float, r: float) -> float:
    """Density ratio r*d / ((1-r)*K_omega + r*K_alpha); zero when r = 0."""
    if r == 0.0:
        return 0.0
    return r * d / ((1.0 - r) * k_omega + r * k_alpha)


def select_params_realistic(omega: float, k_omega: float, k_alpha: float,
                            d: int, r: float) -> ParamChoice:
    """(p, tau) minimizing the worst-case total complexity over L_max in [L, nL]."""
    mu_r = downlink_uplink_ratio(d, k_omega, k_alpha, r)
    inv_mu_r = math.inf if mu_r == 0.0 else 1.0 / mu_r
    p = min(1.0 / (omega + 1.0), inv_mu_r)
    p = min(max(p, 0.0), 1.0)
    tau = p ** (1.0 / 3.0) / (omega + 1.0) ** (2.0 / 3.0)
    tau = min(max(tau, 0.0), 1.0)
    return ParamChoice(p=p, tau=tau, provenance="realistic", mu_r=mu_r)


def select_params_optimistic(omega: float, k_omega: float, k_alpha: float, d: int,
                             r: float, L: float, L_max: float, n: int,
                             alpha: float) -> ParamChoice:
    """(p, tau) when the ratio L_max/L is known."""
    if not (0 < L <= L_max * (1 + 1e-12) and L_max <= n * L * (1 + 1e-12)):
        raise ValueError(f"need 0 < L <= L_max <= n*L, got L={L}, L_max={L_max}, n={n}")
    mu_r = downlink_uplink_ratio(d, k_omega, k_alpha, r)
    inv_mu_r = math.inf if mu_r == 0.0 else 1.0 / mu_r
    ratio = L * n / L_max
    om1 = omega + 1.0
    p = min(
        1.0,
        inv_mu_r,
        ratio ** (1.0 / 3.0) / om1,
        max(1.0 / om1, math.sqrt(ratio) / (math.sqrt(alpha) * om1 ** 1.5)),
    )
    p = min(max(p, 0.0), 1.0)
    tau = min(1.0, ratio ** (1.0 / 3.0) * min(1.0 / om1, p ** (1.0 / 3.0) / om1 ** (2.0 / 3.0)))
    tau = min(max(tau, 0.0), 1.0)
    return ParamChoice(p=p, tau=tau, provenance="optimistic", mu_r=mu_r)


def rounds_realistic(L, L_max, mu, omega, alpha, n, mu_r):
    """Round-count expression of the realistic parameter choice (constants dropped)."""
    boost = np.maximum(omega + 1.0, mu_r)
    out = np.sqrt(L * boost / (alpha * mu))
    out = np.maximum(out, np.sqrt(L_max * omega * boost / (n * mu)))
    out = np.maximum(out, 1.0 / alpha)
    out = np.maximum(out, omega + 1.0)
    return np.maximum(out, mu_r)


def total_realistic(L, L_max, mu, omega, alpha, n, d, k_omega, k_alpha, r):
    weight = (1.0 - r) * k_omega + r * k_alpha
    mu_r = np.where(r == 0.0, 0.0, r * d / weight)
    return weight * rounds_realistic(L, L_max, mu, omega, alpha, n, mu_r) + d


def total_ef21p_diana(L, L_max, mu, omega, alpha, n, d, k_omega, k_alpha, r):
    weight = (1.0 - r) * k_omega + r * k_alpha
    return weight * (L / (alpha * mu) + omega * L_max / (n * mu) + omega) + d


def total_agd(L, mu, d):
    return d * np.sqrt(L / mu)


def agd_coupling(K: int, d: int, r: float) -> tuple[int, int]:
    """Expected densities (K_omega, K_alpha) pairing RandK/TopK against AGD."""
    if not 1 <= K <= d:
        raise ValueError("K out of range")
    if r <= 0.5:
        k_alpha = d if r == 0.0 else min(math.ceil((1.0 - r) / r * K), d)
        return K, k_alpha
    k_omega = d if r == 1.0 else min(math.ceil(r / (1.0 - r) * K), d)
    return k_omega, K


def expected_ledger(algo: str, rounds: int, n_heads: int, k_omega: int,
                    k_alpha: int, d: int) -> tuple[int, int]:
    """Closed-form per-worker uplink and downlink coordinate counts.

    n_heads is the number of rounds whose coin came up heads (relevant to the
    bidirectional accelerated method only).
    """
    if algo == "2direction":
        return 2 * k_omega * rounds + d, k_alpha * rounds + 2 * d * n_heads + d
    if algo == "adiana":
        return 2 * k_omega * rounds + d, d * rounds + d
    if algo == "ef21p_diana":
        return k_omega * rounds + d, k_alpha * rounds + d
    if algo in ("gd", "agd"):
        return d * rounds, d * rounds
    raise ValueError(f"unknown algorithm {algo!r}")


def _random_constant_grid(rng: np.random.Generator, size: int):
    """Random tuples satisfying mu <= L <= Lhat <= L_max <= n L."""
    mu = 10.0 ** rng.uniform(-6, 2, size)
    L = mu * 10.0 ** rng.uniform(0, 8, size)
    n = rng.integers(1, 1000, size).astype(float)
    L_max = L * n ** rng.uniform(0, 1, size)
    omega = np.where(rng.random(size) < 0.1, 0.0, 10.0 ** rng.uniform(-2, 4, size))
    alpha = 10.0 ** rng.uniform(-4, 0, size)
    d = rng.integers(1, 10**6, size).astype(float)
    k_omega = np.ceil(d * rng.uniform(0, 1, size)).clip(1, d)
    k_alpha = np.ceil(d * rng.uniform(0, 1, size)).clip(1, d)
    r = rng.random(size)
    r[: size // 20] = 0.0
    r[size // 20: size // 10] = 1.0
    return mu, L, L_max, n, omega, alpha, d, k_omega, k_alpha, r


def ef21_dominance_sweep(num_points: int = 20000, seed: int = 0) -> float:
    """Max ratio of the realistic total to the EF21-P+DIANA total over a random grid."""
    rng = np.random.default_rng(seed)
    mu, L, L_max, n, omega, alpha, d, k_omega, k_alpha, r = _random_constant_grid(rng, num_points)
    ours = total_realistic(L, L_max, mu, omega, alpha, n, d, k_omega, k_alpha, r)
    theirs = total_ef21p_diana(L, L_max, mu, omega, alpha, n, d, k_omega, k_alpha, r)
    return float(np.max(ours / theirs))


def agd_dominance_sweep(num_points: int = 20000, seed: int = 0) -> float:
    """Max ratio of the realistic total to d*sqrt(L/mu) under the RandK/TopK coupling."""
    rng = np.random.default_rng(seed)
    mu = 10.0 ** rng.uniform(-6, 2, num_points)
    L = mu * 10.0 ** rng.uniform(0, 8, num_points)
    n = rng.integers(1, 1000, num_points).astype(float)
    L_max = L * n ** rng.uniform(0, 1, num_points)
    d = rng.integers(2, 10**6, num_points)
    K = np.ceil(d * rng.uniform(0, 1, num_points)).astype(int).clip(1, d)
    r = rng.random(num_points)
    r[: num_points // 20] = 0.0
    r[num_points // 20: num_points // 10] = 1.0
    worst = 0.0
    for i in range(num_points):
        k_omega, k_alpha = agd_coupling(int(K[i]), int(d[i]), float(r[i]))
        omega = d[i] / k_omega - 1.0
        alpha = k_alpha / d[i]
        ours = total_realistic(L[i], L_max[i], mu[i], omega, alpha, n[i],
                               float(d[i]), k_omega, k_alpha, r[i])
        worst = max(worst, float(ours / total_agd(L[i], mu[i], d[i])))
    return worst
