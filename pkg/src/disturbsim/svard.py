"""Per-row vulnerability profiles and profile-adaptive preventive refresh.

A profile assigns every row one of at most 16 vulnerability bins, each
with its own first-bitflip hammer count. The adaptation layer re-solves
the preventive-refresh probability per bin, so strong rows stop paying
the worst-case refresh rate while the weakest bin keeps the exact
unwrapped behavior.
"""

import json
import random
from dataclasses import dataclass

from .errors import ProfileError
from .para import DEFAULT_TARGET_PRH, ParaEngine, ParaSolverInput, solve_pth
from .sketch import derive_seed

MAX_BINS = 16

ACTIVATED_ROW = "ActivatedRow"
BLAST_RADIUS_MIN = "BlastRadiusMin"


@dataclass(frozen=True)
class SvardConfig:
    enabled: bool = True
    lookup_scope: str = BLAST_RADIUS_MIN

    def __post_init__(self):
        if self.lookup_scope not in (ACTIVATED_ROW, BLAST_RADIUS_MIN):
            raise ProfileError(f"unknown lookup scope {self.lookup_scope!r}")


class VulnerabilityProfile:
    def __init__(self, bins, bin_hcfirst):
        """bins: per-row bin id list; bin_hcfirst: bin id -> HC_first."""
        if len(bin_hcfirst) > MAX_BINS:
            raise ProfileError(f"at most {MAX_BINS} bins allowed")
        ids = sorted(bin_hcfirst)
        values = [bin_hcfirst[i] for i in ids]
        if any(v <= 0 for v in values):
            raise ProfileError("HC_first values must be positive")
        if any(a >= b for a, b in zip(values, values[1:])):
            raise ProfileError("HC_first must ascend strictly with bin id")
        missing = {b for b in bins if b not in bin_hcfirst}
        if missing:
            raise ProfileError(f"rows reference unknown bins {sorted(missing)}")
        self.bins = list(bins)
        self.bin_hcfirst = dict(bin_hcfirst)

    @property
    def rows(self):
        return len(self.bins)

    @property
    def worst_hcfirst(self):
        return min(self.bin_hcfirst.values())

    def hcfirst_of_row(self, row):
        return self.bin_hcfirst[self.bins[row]]

    def hcfirst_for_act(self, row, scope=BLAST_RADIUS_MIN, r_blast=1):
        """HC_first governing a preventive decision for an activation of `row`.

        BlastRadiusMin takes the minimum over every row the activation can
        disturb; edge rows just use the neighbors that exist.
        """
        if scope == ACTIVATED_ROW:
            return self.hcfirst_of_row(row)
        lo = max(0, row - r_blast)
        hi = min(self.rows - 1, row + r_blast)
        return min(self.hcfirst_of_row(r) for r in range(lo, hi + 1))

    def scaled_to(self, target_nrh):
        """Rescale every bin so the weakest bin's HC_first equals the target."""
        factor = target_nrh / self.worst_hcfirst
        scaled = {b: max(1, round(v * factor)) for b, v in self.bin_hcfirst.items()}
        return VulnerabilityProfile(self.bins, scaled)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({str(b): v for b, v in self.bin_hcfirst.items()}))
            fh.write("\n")
            for row, b in enumerate(self.bins):
                fh.write(f"{row},{b}\n")

    def __eq__(self, other):
        return (isinstance(other, VulnerabilityProfile)
                and self.bins == other.bins
                and self.bin_hcfirst == other.bin_hcfirst)


def load_profile(path, rows=None):
    """Read a profile file: a JSON bin->HC_first header line, then
    `row_id,bin` CSV lines covering every geometry row."""
    with open(path) as fh:
        header = fh.readline()
        try:
            bin_hcfirst = {int(k): v for k, v in json.loads(header).items()}
        except (ValueError, json.JSONDecodeError) as exc:
            raise ProfileError(f"bad profile header: {exc}")
        entries = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                row_s, bin_s = line.split(",")
                entries[int(row_s)] = int(bin_s)
            except ValueError:
                raise ProfileError(f"{path}:{lineno}: expected 'row_id,bin'")
    n = rows if rows is not None else (max(entries) + 1 if entries else 0)
    missing = [r for r in range(n) if r not in entries]
    if missing:
        raise ProfileError(f"profile missing rows (first: {missing[0]})")
    return VulnerabilityProfile([entries[r] for r in range(n)], bin_hcfirst)


def generate_profile(bin_spec, rows, seed):
    """Deterministically assign rows to bins.

    bin_spec: list of (fraction, hc_first), weakest first. Fractions must
    sum to 1; counts are rounded with the remainder landing in the last bin.
    """
    if not bin_spec:
        raise ProfileError("need at least one bin")
    if abs(sum(f for f, _ in bin_spec) - 1.0) > 1e-9:
        raise ProfileError("bin fractions must sum to 1")
    hcs = [hc for _, hc in bin_spec]
    bin_hcfirst = {i: hc for i, hc in enumerate(hcs)}
    counts = [int(round(f * rows)) for f, _ in bin_spec]
    counts[-1] += rows - sum(counts)
    if counts[-1] < 0:
        raise ProfileError("bin fractions over-allocate the rows")
    labels = [b for b, c in enumerate(counts) for _ in range(c)]
    rng = random.Random(derive_seed(seed, "svard-profile"))
    rng.shuffle(labels)
    return VulnerabilityProfile(labels, bin_hcfirst)


class SvardPara(ParaEngine):
    """PARA whose refresh probability follows the activated row's bin.

    Per-bin probabilities come from the same solver as plain PARA, so the
    weakest bin's rows behave exactly like an unwrapped engine at the
    worst-case threshold.
    """

    def __init__(self, profile: VulnerabilityProfile, rows_per_bank, rng,
                 config: SvardConfig = None, r_blast=1, hc_deadline=0,
                 t_refw=64_000_000_000, t_rc=46_250,
                 target_prh=DEFAULT_TARGET_PRH):
        if profile.rows != rows_per_bank:
            raise ProfileError("profile row count does not match the bank")
        self.config = config or SvardConfig()
        self.profile = profile
        pth_by_hc = {
            hc: solve_pth(ParaSolverInput(n_rh=hc, t_refw=t_refw, t_rc=t_rc,
                                          hc_deadline=hc_deadline,
                                          target_prh=target_prh))
            for hc in set(profile.bin_hcfirst.values())
        }
        worst_pth = pth_by_hc[profile.worst_hcfirst]
        super().__init__(worst_pth, rows_per_bank, rng)
        self.pth_by_hc = pth_by_hc
        # per-row effective probability, resolved once (profiles are immutable)
        self.row_pth = [
            pth_by_hc[profile.hcfirst_for_act(row, self.config.lookup_scope, r_blast)]
            for row in range(rows_per_bank)
        ] if self.config.enabled else None

    def _pth_for(self, row):
        if self.row_pth is None:
            return self.p_th
        return self.row_pth[row]
