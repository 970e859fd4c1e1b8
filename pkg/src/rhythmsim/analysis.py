"""Global-observer privacy analysis.

Anonymity-set accounting over simulation output, the closed-form linking
probabilities for an observer that distinguishes credentials only by issuer
flavor, and two empirical estimators that cross-validate them:

- empirical_link_probability simulates the observer model the closed forms
  describe: the population's flavor propensities define a candidate lottery
  (each vehicle weighted by its probability of carrying the flavor-consistent
  credential at the next update) and the observer's guess is one draw from
  it. The estimator samples vehicles, never evaluates the formulas, and is
  exact in expectation for every parameter corner.
- empirical_link_from_log replays a full simulation log: the observer guesses
  uniformly within the realized flavor set of each slot transition, so its
  agreement with the closed forms is statistical, not exact.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .credentials import FLAVOR_SELF, FLAVOR_SILENT, FLAVOR_VPKI
from .util import derive_seed, fmt_float

FLAVOR_CODE = {FLAVOR_VPKI: 0, FLAVOR_SELF: 1, FLAVOR_SILENT: 2}
CODE_FLAVOR = {v: k for k, v in FLAVOR_CODE.items()}

LINK_KINDS = ("baseline", "vpki_to_vpki", "vpki_to_self", "self_to_self", "avg_with_k")

IDENTITY_TOL = 1e-12


class ObservationLog:
    """One record per (slot, vehicle): flavor used, pseudonym id, slot bounds."""

    def __init__(self, vehicle_ids, slots, flavors, pseudonym_ids):
        self.vehicle_ids = list(vehicle_ids)
        self.slots = [tuple(s) for s in slots]
        self.flavors = np.asarray(flavors, dtype=np.int8)
        self.pseudonym_ids = pseudonym_ids
        if self.flavors.shape != (len(self.slots), len(self.vehicle_ids)):
            raise ValueError("flavor matrix shape does not match slots x vehicles")

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def population(self) -> int:
        return len(self.vehicle_ids)

    def flavor_counts(self, slot: int) -> tuple[int, int, int]:
        if not 0 <= slot < self.n_slots:
            raise IndexError(f"slot {slot} outside log range 0..{self.n_slots - 1}")
        row = self.flavors[slot]
        return (
            int((row == FLAVOR_CODE[FLAVOR_VPKI]).sum()),
            int((row == FLAVOR_CODE[FLAVOR_SELF]).sum()),
            int((row == FLAVOR_CODE[FLAVOR_SILENT]).sum()),
        )

    def to_csv(self) -> str:
        lines = ["slot,vehicle_id,flavor,pseudonym_id,t_s_ms,t_e_ms"]
        for s, (t_s, t_e) in enumerate(self.slots):
            for v, vid in enumerate(self.vehicle_ids):
                lines.append(
                    f"{s},{vid},{CODE_FLAVOR[int(self.flavors[s, v])]},"
                    f"{self.pseudonym_ids[s][v]},{t_s},{t_e}"
                )
        return "\n".join(lines) + "\n"


def anonymity_sets(log: ObservationLog, slot: int) -> tuple[int, int]:
    """Sizes of the two indistinguishability sets (VPKI-flavor, self-certified)
    in one slot; they sum to the slot's non-silent vehicle count."""
    vpki, self_certified, _ = log.flavor_counts(slot)
    return vpki, self_certified


# -- closed forms -------------------------------------------------------------


def analytic_link_baseline(n_vpki: int) -> float:
    """Observer's chance of linking two successive VPKI credentials when every
    vehicle keeps using VPKI credentials: 1/N."""
    if n_vpki < 1:
        raise ValueError("baseline linking is undefined for N < 1")
    return 1.0 / n_vpki


def analytic_link_vpki_to_vpki(n_vpki: int, r: float) -> float:
    """Linking VPKI credential to VPKI credential under randomized opt-in:
    (1-r)/(N - rN), which reduces to 1/N."""
    if n_vpki < 1:
        raise ValueError("undefined for N < 1")
    if not 0.0 <= r < 1.0:
        raise ValueError("degenerate: r must satisfy 0 <= r < 1 (no VPKI set at r=1)")
    direct = (1.0 - r) / (n_vpki - r * n_vpki)
    reduced = 1.0 / n_vpki
    if abs(direct - reduced) > IDENTITY_TOL:
        raise ArithmeticError(f"identity violated: {direct} vs {reduced}")
    return reduced


def analytic_link_vpki_to_self(n_vpki: int, m_exhausted: int, r: float) -> float:
    """Linking a VPKI credential to the same vehicle's next, self-certified one:
    r/(M + rN) = 1/(N + M/r); strictly below 1/N whenever M > 0."""
    if n_vpki < 1:
        raise ValueError("undefined for N < 1")
    if m_exhausted < 0:
        raise ValueError("M must be >= 0")
    if not 0.0 < r <= 1.0:
        raise ValueError("r must satisfy 0 < r <= 1")
    direct = r / (m_exhausted + r * n_vpki)
    reduced = 1.0 / (n_vpki + m_exhausted / r)
    if abs(direct - reduced) > IDENTITY_TOL:
        raise ArithmeticError(f"identity violated: {direct} vs {reduced}")
    if m_exhausted > 0 and not direct < 1.0 / n_vpki:
        raise ArithmeticError("expected strict privacy gain for M > 0")
    return direct


def analytic_link_self_to_self(n_vpki: int, m_exhausted: int, r: float) -> float:
    """Linking within the self-certified set: 1/(M + rN)."""
    if n_vpki < 0 or m_exhausted < 0:
        raise ValueError("counts must be >= 0")
    denom = m_exhausted + r * n_vpki
    if denom <= 0:
        raise ValueError("empty self-certified set: M + rN must be positive")
    return 1.0 / denom


def analytic_link_avg_with_k(n_vpki: int, r: float, k_never: int) -> float:
    """Average VPKI-to-VPKI linking when K of N vehicles never participate:

        K/D^2 + (N - r(N-K) - K) * (1-r) / D^2,   D = K + (N-K)(1-r)

    Reduces to 1/N at both K=0 and K=N.
    """
    if n_vpki < 1:
        raise ValueError("undefined for N < 1")
    if not 0 <= k_never <= n_vpki:
        raise ValueError("K must satisfy 0 <= K <= N")
    if not 0.0 <= r < 1.0:
        raise ValueError("r must satisfy 0 <= r < 1")
    d = k_never + (n_vpki - k_never) * (1.0 - r)
    if d <= 0:
        raise ValueError("empty VPKI set: D must be positive")
    first = k_never / (d * d)
    second = (n_vpki - r * (n_vpki - k_never) - k_never) * (1.0 - r) / (d * d)
    value = first + second
    if k_never in (0, n_vpki) and abs(value - 1.0 / n_vpki) > IDENTITY_TOL:
        raise ArithmeticError(f"reduction to 1/N violated at K={k_never}: {value}")
    return value


def avg_with_k_class_terms(n_vpki: int, r: float, k_never: int) -> dict:
    """The formula's two classes, exposed separately: membership weight of each
    class within the VPKI set and its per-target linking probability."""
    d = k_never + (n_vpki - k_never) * (1.0 - r)
    if d <= 0:
        raise ValueError("empty VPKI set")
    return {
        "weight_never": k_never / d,
        "p_never": 1.0 / d,
        "weight_participant": (n_vpki - k_never) * (1.0 - r) / d,
        "p_participant": (1.0 - r) / d,
    }


# -- Monte Carlo oracle --------------------------------------------------------


@dataclass(frozen=True)
class AnalyticalParams:
    """Population composition: N VPKI-equipped, M exhausted, opt-in r, K never-join."""

    n_vpki: int
    m_exhausted: int = 0
    r: float = 0.0
    k_never: int = 0

    def __post_init__(self):
        if self.n_vpki < 0 or self.m_exhausted < 0:
            raise ValueError("counts must be >= 0")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must be in [0,1]")
        if not 0 <= self.k_never <= self.n_vpki:
            raise ValueError("K must satisfy 0 <= K <= N")


@dataclass(frozen=True)
class LinkingEstimate:
    estimate: float
    trials: int
    stderr: float

    @classmethod
    def from_successes(cls, successes: int, trials: int):
        if trials < 1:
            raise ValueError("trials must be >= 1")
        p = successes / trials
        return cls(estimate=p, trials=trials, stderr=math.sqrt(p * (1.0 - p) / trials))

    @classmethod
    def from_mean(cls, mean: float, trials: int):
        if trials < 1:
            raise ValueError("trials must be >= 1")
        p = min(max(mean, 0.0), 1.0)
        return cls(estimate=mean, trials=trials, stderr=math.sqrt(p * (1.0 - p) / trials))


def _candidate_weights(params: AnalyticalParams, kind: str):
    """Per-vehicle lottery weights at the second update plus the target index.

    Weight = the vehicle's propensity to carry the kind's second-flavor
    credential: never-join vehicles 1 (VPKI) / 0 (self), participants (1-r)
    or r, exhausted vehicles 0 / 1.
    """
    n, m, r, k = params.n_vpki, params.m_exhausted, params.r, params.k_never
    if kind == "baseline":
        if n < 1:
            raise ValueError("baseline needs N >= 1")
        return np.ones(n), 0
    if kind == "vpki_to_vpki":
        if n < 1 or not 0.0 <= r < 1.0:
            raise ValueError("vpki_to_vpki needs N >= 1 and r < 1")
        return np.full(n, 1.0 - r), 0
    if kind == "vpki_to_self":
        if n < 1 or not 0.0 < r <= 1.0:
            raise ValueError("vpki_to_self needs N >= 1 and r > 0")
        return np.concatenate([np.full(n, r), np.ones(m)]), 0
    if kind == "self_to_self":
        if m < 1:
            raise ValueError("self_to_self needs an exhausted target (M >= 1)")
        return np.concatenate([np.full(n, r), np.ones(m)]), n
    raise ValueError(f"unknown link kind {kind!r}")


def empirical_link_probability(
    params: AnalyticalParams, kind: str, trials: int, seed: int
) -> LinkingEstimate:
    """Monte Carlo of the flavor-distinguishing observer across one update pair.

    Every trial materializes the candidate lottery over individual vehicles
    (weights = flavor propensities dictated by the link kind) and draws the
    observer's guess from it; for the K-averaged kind the tracked target is
    itself drawn from the first update's VPKI-set composition. Success means
    the guess hits the target. Counts are compared against the closed forms
    by the callers; nothing here evaluates them.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if kind not in LINK_KINDS:
        raise ValueError(f"unknown link kind {kind!r}")
    gen = np.random.Generator(
        np.random.PCG64(derive_seed("linkmc", kind, params, trials, seed))
    )
    if kind == "avg_with_k":
        n, r, k = params.n_vpki, params.r, params.k_never
        if n < 1 or not 0.0 <= r < 1.0:
            raise ValueError("avg_with_k needs N >= 1 and r < 1")
        # Weight of appearing in the VPKI set at either update: never-join 1,
        # participant (1-r); same composition at both updates.
        weights = np.concatenate([np.ones(k), np.full(n - k, 1.0 - r)])
        if weights.sum() <= 0:
            raise ValueError("empty VPKI set under these parameters")
        cum = np.cumsum(weights)
        target_idx = kernels.weighted_pick(cum, gen.random(trials))
        guess_idx = kernels.weighted_pick(cum, gen.random(trials))
        successes = int((target_idx == guess_idx).sum())
        return LinkingEstimate.from_successes(successes, trials)

    weights, target = _candidate_weights(params, kind)
    if weights.sum() <= 0:
        raise ValueError("no flavor-consistent candidates under these parameters")
    cum = np.cumsum(weights)
    picks = kernels.weighted_pick(cum, gen.random(trials))
    successes = int((picks == target).sum())
    return LinkingEstimate.from_successes(successes, trials)


def analytic_for(kind: str, params: AnalyticalParams) -> float:
    if kind == "baseline":
        return analytic_link_baseline(params.n_vpki)
    if kind == "vpki_to_vpki":
        return analytic_link_vpki_to_vpki(params.n_vpki, params.r)
    if kind == "vpki_to_self":
        return analytic_link_vpki_to_self(params.n_vpki, params.m_exhausted, params.r)
    if kind == "self_to_self":
        return analytic_link_self_to_self(params.n_vpki, params.m_exhausted, params.r)
    if kind == "avg_with_k":
        return analytic_link_avg_with_k(params.n_vpki, params.r, params.k_never)
    raise ValueError(f"unknown link kind {kind!r}")


def sweep_grid(
    n_values=(2, 10, 100),
    r_values=(0.1, 0.2, 0.5, 0.9),
    m_values=(0, 1, 10),
    kinds=LINK_KINDS,
):
    """The canonical verification grid: every valid (kind, params) cell."""
    cells = []
    for kind in kinds:
        for n in n_values:
            if kind == "baseline":
                cells.append((kind, AnalyticalParams(n_vpki=n)))
                continue
            for r in r_values:
                if kind == "vpki_to_vpki":
                    cells.append((kind, AnalyticalParams(n_vpki=n, r=r)))
                elif kind == "avg_with_k":
                    for k in sorted({0, n // 4, n // 2, n}):
                        cells.append((kind, AnalyticalParams(n_vpki=n, r=r, k_never=k)))
                else:
                    for m in m_values:
                        if kind == "self_to_self" and m < 1:
                            continue
                        cells.append(
                            (kind, AnalyticalParams(n_vpki=n, m_exhausted=m, r=r))
                        )
    return cells


def verify_formulas(trials=100_000, seed=0, grid=None, sigmas=4.0, inject_error=False):
    """Analytic-vs-Monte-Carlo table over the sweep grid.

    Each row carries both values and whether they agree within `sigmas`
    standard errors. inject_error perturbs the analytic side (negative
    control for the CLI's failure path).
    """
    rows = []
    for kind, params in grid if grid is not None else sweep_grid():
        analytic = analytic_for(kind, params)
        if inject_error:
            analytic = analytic * 1.05 + 0.001
        est = empirical_link_probability(params, kind, trials, seed)
        tolerance = sigmas * est.stderr
        rows.append(
            {
                "kind": kind,
                "N": params.n_vpki,
                "M": params.m_exhausted,
                "r": params.r,
                "K": params.k_never,
                "analytic": analytic,
                "empirical": est.estimate,
                "stderr": est.stderr,
                "ok": abs(est.estimate - analytic) <= tolerance,
            }
        )
    return rows


# -- end-to-end observer -----------------------------------------------------


def classify_vehicles(log: ObservationLog) -> dict:
    """Vehicle classes from the realized log: exhausted (self-certified in
    every non-silent slot), never_join (VPKI throughout), opt_in (mixed)."""
    classes = {}
    for v, vid in enumerate(log.vehicle_ids):
        col = log.flavors[:, v]
        used = col[col != FLAVOR_CODE[FLAVOR_SILENT]]
        if len(used) == 0:
            classes[vid] = "silent"
        elif np.all(used == FLAVOR_CODE[FLAVOR_SELF]):
            classes[vid] = "exhausted"
        elif np.all(used == FLAVOR_CODE[FLAVOR_VPKI]):
            classes[vid] = "never_join"
        else:
            classes[vid] = "opt_in"
    return classes


def empirical_link_from_log(
    log: ObservationLog, link_initiator: bool = False, initiators=()
) -> dict:
    """Observer success at re-identifying each vehicle across consecutive slots.

    For a vehicle transitioning into flavor f, the observer guesses uniformly
    within slot k+1's realized f-set, succeeding with probability 1/|set|;
    the reported estimates are those probabilities averaged over transitions
    (exact expectations over the guess randomness, not sampled). When
    link_initiator is set, transitions of initiating vehicles between two
    self-certified slots score 1.0: their initiation CAM already tied them to
    the self-certified chain.

    Returns per-pair series, per-vehicle means, and per-class aggregates.
    """
    if log.n_slots < 2:
        raise ValueError("need at least 2 slots to link across updates")
    initiators = set(initiators)
    classes = classify_vehicles(log)
    vpki_code, self_code = FLAVOR_CODE[FLAVOR_VPKI], FLAVOR_CODE[FLAVOR_SELF]

    per_vehicle_sum = np.zeros(log.population)
    per_vehicle_count = np.zeros(log.population, dtype=np.int64)
    per_pair = []
    for k in range(log.n_slots - 1):
        nxt = log.flavors[k + 1]
        set_sizes = {
            vpki_code: int((nxt == vpki_code).sum()),
            self_code: int((nxt == self_code).sum()),
        }
        probs = []
        for v in range(log.population):
            f0, f1 = int(log.flavors[k, v]), int(nxt[v])
            if f0 == FLAVOR_CODE[FLAVOR_SILENT] or f1 == FLAVOR_CODE[FLAVOR_SILENT]:
                continue
            if (
                link_initiator
                and log.vehicle_ids[v] in initiators
                and f0 == self_code
                and f1 == self_code
            ):
                p = 1.0
            else:
                p = 1.0 / set_sizes[f1]
            probs.append(p)
            per_vehicle_sum[v] += p
            per_vehicle_count[v] += 1
        per_pair.append(
            LinkingEstimate.from_mean(float(np.mean(probs)) if probs else 0.0, max(len(probs), 1))
        )

    per_vehicle = {}
    for v, vid in enumerate(log.vehicle_ids):
        if per_vehicle_count[v]:
            per_vehicle[vid] = LinkingEstimate.from_mean(
                per_vehicle_sum[v] / per_vehicle_count[v], int(per_vehicle_count[v])
            )

    per_class = {}
    for cls in ("exhausted", "opt_in", "never_join"):
        members = [vid for vid, c in classes.items() if c == cls]
        pairs = sum(per_vehicle[m].trials for m in members if m in per_vehicle)
        if not members or pairs == 0:
            continue
        total = sum(
            per_vehicle[m].estimate * per_vehicle[m].trials
            for m in members
            if m in per_vehicle
        )
        per_class[cls] = LinkingEstimate.from_mean(total / pairs, pairs)

    return {
        "per_pair": per_pair,
        "per_vehicle": per_vehicle,
        "per_class": per_class,
        "classes": classes,
    }


def emit_report(results: dict, out_dir) -> list:
    """Write each named table as a CSV under out_dir.

    results: name -> (header columns, row tuples); floats get 9 significant
    digits. Returns the created paths.
    """
    import os

    if not results:
        raise ValueError("nothing to report")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, (header, rows) in results.items():
        path = os.path.join(out_dir, f"{name}.csv")
        lines = [",".join(header)]
        for row in rows:
            cells = [
                fmt_float(cell) if isinstance(cell, float) else str(cell) for cell in row
            ]
            lines.append(",".join(cells))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        paths.append(path)
    return paths
