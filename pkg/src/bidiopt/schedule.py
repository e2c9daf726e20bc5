"""Learning-rate state machine for the accelerated bidirectional method.

Each round solves a scalar quadratic for the momentum weight theta, caps it
at theta_min, and grows the aggregate weight Gamma.  The generated sequences
obey six provable properties (exposed here as checkable bounds) that the
convergence analysis relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "THEORY_CONSTANT",
    "ScheduleParams",
    "ScheduleState",
    "theta_min",
    "theta_bar",
    "calc_learning_rates",
    "advance",
    "lbar_theory",
    "strongly_convex_q",
    "default_gamma0",
    "t_bar",
    "gamma_lower_bound_exp",
    "gamma_lower_bound_piecewise",
    "audit_sequences",
]

# Constant in the theoretical step-size bound; "tuned" mode replaces the
# whole L-bar by a grid value instead.
THEORY_CONSTANT = 660508.0


@dataclass(frozen=True)
class ScheduleParams:
    """Parameters driving the learning-rate recursion.

    lbar is the Lipschitz-like step parameter, mu the strong-convexity
    modulus, p the coin probability, alpha/tau/beta the contraction,
    momentum and shift step sizes, gamma0 the initial aggregate weight.
    """

    lbar: float
    mu: float
    p: float
    alpha: float
    tau: float
    beta: float
    gamma0: float = 1.0

    def __post_init__(self):
        if not self.lbar > 0:
            raise ValueError("lbar must be positive")
        if self.mu < 0 or self.mu > self.lbar:
            raise ValueError("need 0 <= mu <= lbar")
        for name in ("p", "alpha", "tau", "beta"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.gamma0 < 1:
            raise ValueError("gamma0 must be >= 1")

    @property
    def theta_min(self) -> float:
        return theta_min(self.p, self.alpha, self.tau, self.beta)


@dataclass
class ScheduleState:
    """Round index, current aggregate weight and the last (theta, gamma)."""

    t: int = 0
    gamma_big: float = 1.0
    theta: float = 0.0
    gamma: float = 0.0


def theta_min(p: float, alpha: float, tau: float, beta: float) -> float:
    """Momentum cap: one quarter of min{1, alpha/p, tau/p, beta/p}."""
    return 0.25 * min(1.0, alpha / p, tau / p, beta / p)


def theta_bar(gamma_big: float, params: ScheduleParams) -> float:
    """Largest root of p*lbar*Gamma*th^2 + p*(lbar+Gamma*mu)*th - (lbar+Gamma*mu) = 0."""
    if not gamma_big > 0:
        raise ValueError("Gamma must be positive")
    p = params.p
    a = 1.0 / gamma_big + params.mu / params.lbar
    return 2.0 * a / (p * (a + math.sqrt(a * a + 4.0 * a / p)))


def calc_learning_rates(gamma_big: float, params: ScheduleParams) -> tuple[float, float, float]:
    """One step of the learning-rate recursion.

    Finds the largest root theta_bar of
        p*lbar*Gamma*th^2 + p*(lbar + Gamma*mu)*th - (lbar + Gamma*mu) = 0,
    caps it at theta_min, and returns (Gamma_next, gamma, theta) with
    gamma = p*theta*Gamma/(1 - p*theta) and Gamma_next = Gamma + gamma.

    The root is evaluated in the rationalized form
        theta_bar = 2a / (p*(a + sqrt(a^2 + 4a/p))),  a = 1/Gamma + mu/lbar,
    which is exact algebra on the quadratic but free of cancellation and of
    overflow for huge Gamma.
    """
    theta = min(theta_bar(gamma_big, params), params.theta_min)
    gamma = params.p * theta * gamma_big / (1.0 - params.p * theta)
    gamma_next = gamma_big + gamma
    if math.isnan(theta) or math.isnan(gamma) or math.isnan(gamma_next):
        raise ArithmeticError("non-finite learning-rate intermediate")
    return gamma_next, gamma, theta


def advance(state: ScheduleState, params: ScheduleParams) -> ScheduleState:
    gamma_next, gamma, theta = calc_learning_rates(state.gamma_big, params)
    return ScheduleState(t=state.t + 1, gamma_big=gamma_next, theta=theta, gamma=gamma)


def lbar_theory(
    L: float,
    L_max: float,
    omega: float,
    alpha: float,
    tau: float,
    p: float,
    beta: float,
    n: int,
    constant: float = THEORY_CONSTANT,
) -> float:
    """Theoretical step parameter: constant times the max of six terms."""
    root_n = math.sqrt(n)
    cross = math.sqrt(L * L_max) * math.sqrt(omega * tau) / (alpha * root_n)
    terms = (
        L / alpha,
        L * p / (alpha * tau),
        cross * p / beta,
        cross * math.sqrt(p / beta),
        L_max * omega * p * p / (beta * beta * n),
        L_max * omega / n,
    )
    return constant * max(terms)


def strongly_convex_q(
    L: float,
    L_max: float,
    mu: float,
    omega: float,
    alpha: float,
    tau: float,
    p: float,
    n: int,
    constant: float = THEORY_CONSTANT,
) -> float:
    """Round constant Q in the linear-rate guarantee 2*exp(-T/Q)*(...)."""
    if mu <= 0:
        raise ValueError("the linear-rate constant needs mu > 0")
    cross = math.sqrt(L * L_max)
    om1 = omega + 1.0
    root_n = math.sqrt(n)
    terms = (
        math.sqrt(L / (alpha * p * mu)),
        math.sqrt(L / (alpha * tau * mu)),
        math.sqrt(cross * om1 * math.sqrt(omega * tau) / (alpha * root_n * mu)),
        math.sqrt(cross * math.sqrt(om1) * math.sqrt(omega * tau) / (alpha * math.sqrt(p) * root_n * mu)),
        math.sqrt(L_max * omega * om1 * om1 * p / (n * mu)),
        math.sqrt(L_max * omega / (n * p * mu)),
        1.0 / alpha,
        1.0 / tau,
        om1,
        1.0 / p,
    )
    return 2.0 * math.sqrt(constant) * max(terms)


def default_gamma0(lbar: float, L: float, mu: float = 0.0) -> float:
    """Default initial aggregate weight.

    mu > 0: the rate-optimal lbar/mu (floored at 1); mu = 0: lbar/L clamped
    into the admissible range [1, lbar/L].
    """
    if mu > 0:
        return max(1.0, lbar / mu)
    return max(1.0, lbar / L)


def _growth_rate(params: ScheduleParams) -> float:
    return min(math.sqrt(params.p * params.mu / (4.0 * params.lbar)), params.p * params.theta_min)


def gamma_lower_bound_exp(t: int, params: ScheduleParams) -> float:
    """Exponential lower bound on Gamma_t (lemma item 4)."""
    e = t * _growth_rate(params)
    return math.inf if e > 709.0 else 0.5 * params.gamma0 * math.exp(e)


def t_bar(params: ScheduleParams) -> int:
    """Switch point of the piecewise Gamma bound (lemma item 5)."""
    ptm = params.p * params.theta_min
    arg = 1.0 / (2.0 * params.gamma0 * params.p * params.theta_min**2)
    return max(math.ceil(math.log(arg) / ptm), 0)


def gamma_lower_bound_piecewise(t: int, params: ScheduleParams) -> float:
    """Piecewise (exponential then quadratic) lower bound on Gamma_t."""
    tb = t_bar(params)
    ptm = params.p * params.theta_min
    if t < tb:
        e = t * ptm
        return math.inf if e > 709.0 else 0.5 * params.gamma0 * math.exp(e)
    return 1.0 / (4.0 * params.p * params.theta_min**2) + params.p * (t - tb) ** 2 / 16.0


def audit_sequences(params: ScheduleParams, steps: int, rtol: float = 1e-12) -> dict:
    """Run the recursion for `steps` rounds and check the six lemma properties.

    Returns a dict mapping property name to True/False.  Properties 1-3 and 6
    are identities/inequalities at relative tolerance rtol; 4-5 are the Gamma
    lower bounds with rtol slack.  Gamma saturating to +inf (possible after
    thousands of exponential-growth steps) compares as inf >= inf and passes.
    """
    gb = params.gamma0
    thetas = np.empty(steps)
    gammas = np.empty(steps)
    Gammas = np.empty(steps + 1)
    Gammas[0] = gb
    for t in range(steps):
        gb, g, th = calc_learning_rates(gb, params)
        thetas[t] = th
        gammas[t] = g
        Gammas[t + 1] = gb

    ok_nonneg = bool(np.all(thetas >= 0) and np.all(gammas >= 0) and not np.any(np.isnan(Gammas)))

    ident = params.p * thetas * Gammas[1:]
    both_inf = np.isinf(gammas) & np.isinf(ident)
    fin = ~both_inf
    close = np.zeros(steps, dtype=bool)
    close[fin] = np.abs(gammas[fin] - ident[fin]) <= rtol * np.abs(ident[fin])
    ok_ident = bool(np.all(both_inf | close))

    lhs = params.lbar * thetas * gammas
    rhs = (params.lbar + Gammas[:-1] * params.mu) * (1.0 + rtol)
    ok_step = bool(np.all(lhs <= rhs))

    bound4 = np.array([gamma_lower_bound_exp(t, params) for t in range(steps + 1)])
    ok_exp = bool(np.all(Gammas >= bound4 * (1.0 - rtol)))

    bound5 = np.array([gamma_lower_bound_piecewise(t, params) for t in range(steps + 1)])
    ok_piecewise = bool(np.all(Gammas >= bound5 * (1.0 - rtol)))

    ok_monotone = bool(np.all(np.diff(thetas) <= rtol * thetas[:-1]))

    return {
        "nonneg_finite": ok_nonneg,
        "gamma_identity": ok_ident,
        "step_product_bound": ok_step,
        "gamma_exp_bound": ok_exp,
        "gamma_piecewise_bound": ok_piecewise,
        "theta_nonincreasing": ok_monotone,
    }
