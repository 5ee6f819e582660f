"""Activation blacklisting, delay enforcement and attacker throttling.

Rows whose filter estimate reaches the blacklisting threshold may only be
re-activated after `t_delay` has passed since their latest activation,
which caps their activation rate below the read-disturbance threshold.
Threads that keep hammering blacklisted rows earn a likelihood index that
shrinks their in-flight request quota down to zero.
"""

import math
import random
from dataclasses import dataclass, field

from .dram import TimingParams
from .errors import ConfigError
from .sketch import DualCbf, derive_seed

OBSERVE_ONLY = "observe"
FULL_FUNCTIONAL = "full"

DEFAULT_QUOTA_MAX = 16

# preset (n_bl, cbf_size) pairs, keyed by threshold; all use t_cbf = t_refw
_PRESETS = {
    32768: (8192, 1024),
    16384: (4096, 1024),
    8192: (2048, 1024),
    4096: (1024, 2048),
    2048: (512, 4096),
    1024: (256, 8192),
}


@dataclass(frozen=True)
class AttackModel:
    """Disturbance reach of one aggressor: per-distance impact weights."""
    r_blast: int = 1
    c_k: tuple = (1.0,)

    @classmethod
    def double_sided(cls):
        return cls(1, (1.0,))

    @classmethod
    def many_sided(cls, r_blast, decay=0.5):
        return cls(r_blast, tuple(decay ** k for k in range(r_blast)))

    @property
    def impact_sum(self):
        if len(self.c_k) != self.r_blast:
            raise ConfigError("need one impact weight per distance")
        return sum(self.c_k)


@dataclass(frozen=True)
class BlockHammerConfig:
    n_rh: int
    n_rh_star: float
    n_bl: int
    cbf_size: int
    t_cbf: int
    t_delay: int
    hb_capacity: int
    mode: str = FULL_FUNCTIONAL
    attack_model: AttackModel = field(default_factory=AttackModel.double_sided)
    quota_max: int = DEFAULT_QUOTA_MAX
    t_refw: int = 64_000_000_000

    @property
    def epoch_len(self):
        return self.t_cbf // 2

    @property
    def counter_width(self):
        # wide enough that saturation cannot hide a count reaching n_bl
        return math.ceil(math.log2(self.n_bl)) + 1

    @property
    def rhli_denominator(self):
        return self.n_rh_star * (self.t_cbf / self.t_refw) - self.n_bl

    @property
    def throttler_saturation(self):
        return int(self.n_rh * (self.t_cbf / self.t_refw))


def derive_config(n_rh, attack_model=None, timings=None, mode=FULL_FUNCTIONAL,
                  quota_max=DEFAULT_QUOTA_MAX):
    """Derive all operating parameters from a RowHammer threshold.

    Preset thresholds use the published table; other thresholds fall back
    to n_bl = n_rh_star / 2 and a filter sized inversely to the threshold.
    """
    attack_model = attack_model or AttackModel.double_sided()
    t = timings or TimingParams()
    n_rh_star = n_rh / (2.0 * attack_model.impact_sum)
    t_cbf = t.t_refw
    if n_rh in _PRESETS and attack_model.r_blast == 1:
        n_bl, cbf_size = _PRESETS[n_rh]
    else:
        n_bl = max(1, int(n_rh_star / 2))
        cbf_size = max(1024, (1 << 23) // n_rh)
    denom = (t_cbf / t.t_refw) * n_rh_star - n_bl
    if denom <= 0:
        raise ConfigError(
            f"blacklist threshold {n_bl} >= window-scaled activation budget {denom + n_bl}")
    if n_bl > 0:
        t_delay = int((t_cbf - n_bl * t.t_rc) / denom)
    else:
        t_delay = int(t.t_refw / n_rh_star)
    if t_delay <= t.t_rc:
        raise ConfigError("derived t_delay does not exceed t_rc; nothing to enforce")
    hb_capacity = math.ceil(4 * t_delay / t.t_faw)
    return BlockHammerConfig(
        n_rh=n_rh, n_rh_star=n_rh_star, n_bl=n_bl, cbf_size=cbf_size,
        t_cbf=t_cbf, t_delay=t_delay, hb_capacity=hb_capacity, mode=mode,
        attack_model=attack_model, quota_max=quota_max, t_refw=t.t_refw,
    )


class HistoryBuffer:
    """FIFO of recent activations, valid for `t_delay` after insertion."""

    def __init__(self, capacity, t_delay):
        self.capacity = capacity
        self.t_delay = t_delay
        self.entries = []           # (insert_time, row_uid) in insert order
        self.last_seen = {}         # row_uid -> latest insert_time
        self.max_occupancy = 0

    def expire(self, now):
        entries = self.entries
        cutoff = now - self.t_delay
        drop = 0
        for t_ins, uid in entries:
            if t_ins > cutoff:
                break
            drop += 1
            if self.last_seen.get(uid) == t_ins:
                del self.last_seen[uid]
        if drop:
            del entries[:drop]

    def push(self, row_uid, now):
        self.expire(now)
        if len(self.entries) >= self.capacity:
            raise AssertionError("history buffer overflow; capacity formula violated")
        self.entries.append((now, row_uid))
        self.last_seen[row_uid] = now
        if len(self.entries) > self.max_occupancy:
            self.max_occupancy = len(self.entries)

    def recent_activation(self, row_uid, now):
        """Latest in-window activation time of the row, or None."""
        t_ins = self.last_seen.get(row_uid)
        if t_ins is not None and t_ins > now - self.t_delay:
            return t_ins
        return None


class Safe:
    ok = True

    def __repr__(self):
        return "Safe"


@dataclass(frozen=True)
class Unsafe:
    retry_after: int
    ok = False


SAFE = Safe()


class BlockHammer:
    """Per-rank engine: one dual filter per bank, one shared history buffer."""

    def __init__(self, config: BlockHammerConfig, banks, rows_per_bank, seed,
                 start_time=0):
        self.cfg = config
        self.banks = banks
        self.rows_per_bank = rows_per_bank
        self.dcbf = {
            b: DualCbf(config.cbf_size, config.counter_width, config.epoch_len,
                       derive_seed(seed, f"dcbf/{b}"), start_time)
            for b in range(banks)
        }
        self.history = HistoryBuffer(config.hb_capacity, config.t_delay)
        # per (thread, bank): [counter_a, counter_b]; index aligned with dcbf.active
        self.counters = {}
        self.active_counter = 0
        self.last_swap = start_time
        self.swap_rng = random.Random(derive_seed(seed, "swap"))
        self.blocked_acts = 0

    def _uid(self, bank, row):
        return bank * self.rows_per_bank + row

    def tick_epoch(self, now):
        """Run due epoch-boundary swaps; call before processing events at `now`."""
        while now - self.last_swap >= self.cfg.epoch_len:
            self.last_swap += self.cfg.epoch_len
            for dcbf in self.dcbf.values():
                dcbf.clear_and_swap(self.last_swap, self.swap_rng)
            for pair in self.counters.values():
                pair[self.active_counter] = 0
            self.active_counter ^= 1

    def next_epoch_boundary(self):
        return self.last_swap + self.cfg.epoch_len

    def is_blacklisted(self, bank, row):
        return self.dcbf[bank].test(row) >= self.cfg.n_bl

    def is_act_safe(self, bank, row, now):
        if self.cfg.mode == OBSERVE_ONLY:
            return SAFE
        if not self.is_blacklisted(bank, row):
            return SAFE
        t_last = self.history.recent_activation(self._uid(bank, row), now)
        if t_last is None:
            return SAFE
        self.blocked_acts += 1
        return Unsafe(retry_after=t_last + self.cfg.t_delay)

    def on_act_issued(self, bank, row, thread, now):
        blacklisted = self.is_blacklisted(bank, row)
        self.dcbf[bank].insert(row)
        self.history.push(self._uid(bank, row), now)
        if blacklisted:
            pair = self.counters.setdefault((thread, bank), [0, 0])
            cap = self.cfg.throttler_saturation
            pair[0] = min(pair[0] + 1, cap)
            pair[1] = min(pair[1] + 1, cap)

    def rhli(self, thread, bank):
        pair = self.counters.get((thread, bank))
        if pair is None:
            return 0.0
        return pair[self.active_counter] / self.cfg.rhli_denominator

    def quota(self, thread, bank):
        if self.cfg.mode == OBSERVE_ONLY:
            return self.cfg.quota_max
        r = self.rhli(thread, bank)
        if r >= 1.0:
            return 0
        return math.ceil(self.cfg.quota_max * (1.0 - r))

    def rhli_report(self):
        return {
            f"{thread}:{bank}": round(self.rhli(thread, bank), 9)
            for (thread, bank) in sorted(self.counters)
        }
