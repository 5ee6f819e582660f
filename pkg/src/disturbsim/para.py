"""Probabilistic preventive-refresh (PARA) runtime and threshold solver.

The solver works on the hammer-count chain: each aggressor activation
either advances the count (probability 1 - p_th/2) or triggers a victim
refresh that resets it (probability p_th/2). A queued preventive refresh
may lag by `hc_deadline` further activations, which tightens the
effective threshold. All probability evaluation is done in log space.
"""

import math
from dataclasses import dataclass

from .errors import ConfigError, DomainError, SolverError

DEFAULT_TARGET_PRH = 1e-15
SOLVER_LOG10_TOL = 1e-6


@dataclass(frozen=True)
class ParaSolverInput:
    n_rh: int
    t_refw: int = 64_000_000_000  # ps
    t_rc: int = 46_250
    hc_deadline: int = 0
    target_prh: float = DEFAULT_TARGET_PRH

    def __post_init__(self):
        if self.n_rh <= self.hc_deadline or self.hc_deadline < 0:
            raise ConfigError("need n_rh > hc_deadline >= 0")
        if not 0.0 < self.target_prh < 1.0:
            raise ConfigError("target probability must lie in (0, 1)")

    @property
    def window_activations(self):
        return self.t_refw // self.t_rc

    @property
    def n_f_max(self):
        """Max number of failed two-activation attempts fitting in the window."""
        return (self.window_activations - self.n_rh - self.hc_deadline) // 2


@dataclass(frozen=True)
class ParaConfig:
    p_th: float
    n_rh: int
    hc_deadline: int = 0

    def __post_init__(self):
        if not 0.0 < self.p_th < 1.0:
            raise ConfigError("p_th must lie in (0, 1)")


def p_failed(hc, p_th, n_rh):
    """Probability of an attempt that fails after `hc` hammers."""
    if not 1 <= hc < n_rh:
        raise DomainError(f"hammer count {hc} outside [1, {n_rh})")
    q = p_th / 2.0
    return (1.0 - q) ** hc * q


def log_p_rh(p_th, inp: ParaSolverInput):
    """log of the worst-case attack success probability, evaluated stably.

    Sum over failed-attempt counts of (1-q)^(N_f + n_rh - hc_deadline) * q^N_f,
    folded into a closed-form geometric series.
    """
    if not 0.0 < p_th < 1.0:
        raise DomainError("p_th must lie in (0, 1)")
    m = inp.n_f_max
    if m < 0:
        raise ConfigError("attack cannot fit in the refresh window")
    q = p_th / 2.0
    log1mq = math.log1p(-q)
    log_r = math.log(q) + log1mq  # ratio of consecutive terms, r < 1/4
    # sum_{k=0}^{m} r^k = (1 - r^(m+1)) / (1 - r)
    r = math.exp(log_r)
    log_sum = math.log1p(-math.exp((m + 1) * log_r)) - math.log1p(-r)
    return (inp.n_rh - inp.hc_deadline) * log1mq + log_sum


def p_rh(p_th, inp: ParaSolverInput):
    return math.exp(log_p_rh(p_th, inp))


def k_factor(p_th, inp: ParaSolverInput):
    """Ratio between the multi-attempt success probability and the
    single-attempt estimate (1 - p_th/2)^n_rh."""
    if not 0.0 < p_th < 1.0:
        raise DomainError("p_th must lie in (0, 1)")
    q = p_th / 2.0
    m = inp.n_f_max
    if m < 0:
        return (1.0 - q) ** (-inp.hc_deadline)
    r = q * (1.0 - q)
    geo = (1.0 - r ** (m + 1)) / (1.0 - r)
    return (1.0 - q) ** (-inp.hc_deadline) * geo


def solve_pth(inp: ParaSolverInput):
    """Bisection for the p_th whose attack success probability hits the target."""
    target_log10 = math.log10(inp.target_prh)
    eps = 1e-12

    def gap(p):
        return log_p_rh(p, inp) / math.log(10) - target_log10

    hi_gap = gap(1.0 - eps)
    if hi_gap > 0:
        raise SolverError(
            f"target 1e{target_log10:.0f} unachievable: best log10 p_rh is "
            f"{hi_gap + target_log10:.3f}")
    lo, hi = eps, 1.0 - eps
    if gap(lo) <= 0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = gap(mid)
        if abs(g) < SOLVER_LOG10_TOL:
            return mid
        if g > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- runtime engine -------------------------------------------------------

class ParaEngine:
    """Draws preventive-refresh targets on row closure.

    Each physical neighbor of the closed row is selected with probability
    p_th/2. Edge rows simply lose the missing side's probability mass.
    """

    def __init__(self, p_th, rows_per_bank, rng):
        if not 0.0 <= p_th <= 1.0:
            raise ConfigError("p_th must lie in [0, 1]")
        self.p_th = p_th
        self.rows_per_bank = rows_per_bank
        self.rng = rng
        self.preventive_count = 0

    def _pth_for(self, row):
        return self.p_th

    def on_close(self, row):
        """Return the victim row to preventively refresh, or None."""
        p = self._pth_for(row)
        u = self.rng.random()
        if u < p / 2.0:
            victim = row - 1
        elif u < p:
            victim = row + 1
        else:
            return None
        if 0 <= victim < self.rows_per_bank:
            self.preventive_count += 1
            return victim
        return None
