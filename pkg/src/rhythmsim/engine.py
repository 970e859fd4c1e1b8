"""Deterministic event-driven simulation engine.

Virtual time is integer milliseconds. Events are totally ordered by
(time, kind rank, vehicle, sequence) with boundary events ranked before
same-instant beacons, so no handler ever observes stale slot state. A fixed
seed reproduces the run byte for byte: every random stream is derived from
(seed, label) and all iteration orders are fixed.
"""

import heapq
import json
import math
from dataclasses import dataclass, field, fields

from . import kernels
from .analysis import FLAVOR_CODE, ObservationLog
from .credentials import FLAVOR_SELF, GridUnknownError, TimeGrid, slot_bounds
from .crypto import CryptoProfile, get_provider, selfcert_batch_ms, vpki_acquisition_ms
from .mobility import WaypointParams, grid_layout, load_trace, synth_mobility
from .protocol import (
    OptInPolicy,
    VehicleState,
    build_cam,
    opt_in_decision,
    process_cam,
    pseudonym_update,
    resolve_slot,
    revert_check,
    rhythm_init,
    verify_cam,
)
from .util import ceil_fraction, child_rng
from .vpki import Infrastructure, ReachabilityModel

EVENT_GAMMA, EVENT_SLOT, EVENT_ACQ, EVENT_BEACON = 0, 1, 2, 3


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    """Full simulation configuration; JSON keys match field names."""

    population: int
    duration_s: float
    gamma_s: float
    tau_p_s: float
    r: float
    warmup_s: float = 0.0
    beacon_hz: float = 10.0
    range_m: float = 300.0
    seed: int = 0
    p: float = 0.0  # fraction of vehicles that run out of pseudonyms
    mobility: dict = field(default_factory=lambda: {"kind": "waypoint"})
    reachability: dict = field(default_factory=lambda: {"mode": "always_on"})
    crypto_profile: dict = field(default_factory=dict)
    provider: str = "mock"
    initial_pool_slots: int | None = None  # None: cover the whole run
    exhausted_pool_slots: int = 0
    probe_timeout_ms: float = 20.0
    keep_switching_after_refill: bool = True
    max_flag_hops: int | None = None
    log_cams: bool = False
    loss_probability: float = 0.0
    grid_unknown_for_exhausted: bool = False
    clock_offset_ms: int = 0

    @classmethod
    def from_dict(cls, data: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> list:
        """Every problem, collected up front."""
        issues = []
        if self.population < 1:
            issues.append("population must be >= 1")
        for name in ("duration_s", "gamma_s", "tau_p_s", "beacon_hz", "range_m"):
            if getattr(self, name) <= 0:
                issues.append(f"{name} must be positive")
        if self.warmup_s < 0:
            issues.append("warmup_s must be >= 0")
        if not 0.0 <= self.r <= 1.0:
            issues.append("r must be in [0,1]")
        if not 0.0 <= self.p <= 1.0:
            issues.append("p must be in [0,1]")
        if not 0.0 <= self.loss_probability <= 1.0:
            issues.append("loss_probability must be in [0,1]")
        if self.tau_p_s > 0 and self.gamma_s > 0:
            gamma_ms, tau_ms = round(self.gamma_s * 1000), round(self.tau_p_s * 1000)
            if tau_ms == 0 or gamma_ms % tau_ms != 0:
                issues.append("gamma_s must be an integer multiple of tau_p_s")
            else:
                for name in ("duration_s", "warmup_s"):
                    if round(getattr(self, name) * 1000) % tau_ms != 0:
                        issues.append(f"{name} must be a whole number of tau_p slots")
        if self.provider not in ("mock", "real"):
            issues.append(f"unknown provider {self.provider!r}")
        if self.mobility.get("kind", "waypoint") not in ("waypoint", "trace", "grid"):
            issues.append(f"unknown mobility kind {self.mobility.get('kind')!r}")
        if self.reachability.get("mode", "always_on") not in (
            "always_on", "disconnected_fraction", "coverage_windows",
        ):
            issues.append(f"unknown reachability mode {self.reachability.get('mode')!r}")
        try:
            CryptoProfile.from_dict(self.crypto_profile)
        except (ValueError, TypeError) as exc:
            issues.append(f"crypto_profile: {exc}")
        return issues


class EventQueue:
    """Time-ordered events; ties break on kind rank, then vehicle, then push order."""

    def __init__(self):
        self._heap = []
        self._seq = 0

    def push(self, t_ms: int, kind: int, vehicle: int = -1, payload=None):
        heapq.heappush(self._heap, (t_ms, kind, vehicle, self._seq, payload))
        self._seq += 1

    def pop(self):
        return heapq.heappop(self._heap)

    def __len__(self):
        return len(self._heap)


class RunTrace:
    """Append-only semantic event log; exportable as JSON lines."""

    SCHEMA_VERSION = 1

    def __init__(self, scenario: Scenario):
        self.events = []
        self.add("run_header", 0, schema_version=self.SCHEMA_VERSION,
                 scenario=scenario.to_dict())

    def add(self, kind: str, t_ms: int, **data):
        record = {"kind": kind, "t_ms": t_ms}
        record.update(data)
        self.events.append(record)

    def of_kind(self, kind: str) -> list:
        return [e for e in self.events if e["kind"] == kind]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.events) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


class _CrlView:
    """Receiver-side revocation snapshot, frozen at the last sync point."""

    __slots__ = ("version", "pids")

    def __init__(self, version, pids):
        self.version = version
        self.pids = frozenset(pids)

    def covers_pseudonym(self, pid):
        return pid in self.pids


def pick_disconnected(seed: int, population: int, p: float) -> frozenset:
    """The seed-chosen vehicles that run out of pseudonyms (exactly ceil(p*pop));
    shares the reachability model's stream so a disconnected-fraction model
    marks the same vehicles unreachable."""
    count = ceil_fraction(p, population)
    if count == 0:
        return frozenset()
    rng = child_rng(seed, "reachability")
    return frozenset(rng.sample(range(population), count))


def _build_mobility(scenario: Scenario, span_s: float):
    kind = scenario.mobility.get("kind", "waypoint")
    if kind == "trace":
        trace = load_trace(scenario.mobility["path"])
        if trace.population != scenario.population:
            raise ScenarioError(
                f"trace holds {trace.population} vehicles, scenario expects "
                f"{scenario.population}"
            )
        return trace
    if kind == "grid":
        return grid_layout(scenario.population, scenario.mobility.get("spacing_m", 200.0))
    params = WaypointParams(
        population=scenario.population,
        duration_s=span_s,
        area_m=tuple(scenario.mobility.get("area_m", (2000.0, 2000.0))),
        speed_mps=tuple(scenario.mobility.get("speed_mps", (8.0, 15.0))),
        pause_s=tuple(scenario.mobility.get("pause_s", (0.0, 5.0))),
    )
    return synth_mobility(params, scenario.seed)


def run(scenario: Scenario) -> tuple:
    """Simulate the scenario; returns (RunTrace, ObservationLog)."""
    issues = scenario.validate()
    if issues:
        raise ScenarioError("; ".join(issues))

    grid = TimeGrid.from_seconds(scenario.gamma_s, scenario.tau_p_s)
    tau = grid.tau_p_ms
    gamma = grid.gamma_ms
    warmup_ms = round(scenario.warmup_s * 1000)
    span_ms = warmup_ms + round(scenario.duration_s * 1000)
    n_total_slots = span_ms // tau
    n_measured = (span_ms - warmup_ms) // tau

    provider = get_provider(scenario.provider)
    profile = CryptoProfile.from_dict(scenario.crypto_profile)
    policy = OptInPolicy(scenario.r)
    infra = Infrastructure(provider, grid, scenario.seed)
    reach = ReachabilityModel.from_dict(
        scenario.reachability, scenario.population, scenario.seed
    )
    trace = RunTrace(scenario)

    mob = _build_mobility(scenario, span_ms / 1000.0)
    vehicle_ids = mob.vehicle_ids
    pop = scenario.population
    exhausted_set = (
        reach.unreachable
        if reach.mode == "disconnected_fraction"
        else pick_disconnected(scenario.seed, pop, scenario.p)
    )

    # -- bootstrap ------------------------------------------------------------
    states = []
    for idx in range(pop):
        identity = vehicle_ids[idx]
        state = VehicleState(
            identity=identity,
            index=idx,
            gamma_ms=gamma,
            tau_p_ms=tau,
            opt_in_rng=child_rng(scenario.seed, "optin", idx),
            keygen_rng=child_rng(scenario.seed, "keygen", idx),
            grid=grid,
            keep_switching_after_refill=scenario.keep_switching_after_refill,
            max_flag_hops=scenario.max_flag_hops,
        )
        infra.ltca.register(identity)
        state.gsk = infra.gm.register(infra.ltca.issue_ticket(identity))
        exhausted = idx in exhausted_set
        if exhausted:
            pool_slots = scenario.exhausted_pool_slots
        elif scenario.initial_pool_slots is None:
            pool_slots = n_total_slots
        else:
            pool_slots = scenario.initial_pool_slots
        if pool_slots > 0:
            pairs = [provider.keygen(state.keygen_rng) for _ in range(pool_slots)]
            issued = infra.pca.issue_pseudonyms(
                infra.ltca.issue_ticket(identity), 0, pool_slots,
                [kp.public_key for kp in pairs],
            )
            for kp, pseudonym in zip(pairs, issued):
                state.pool.add_vpki(pseudonym)
                state.private_keys[pseudonym.id] = kp.private_key
        if exhausted and scenario.grid_unknown_for_exhausted:
            state.grid = None
            state.clock_offset_ms = scenario.clock_offset_ms
        states.append(state)
        trace.add("bootstrap", 0, vehicle=identity, pool_slots=pool_slots,
                  exhausted=exhausted)

    # -- precomputed geometry ---------------------------------------------------
    tick_ms = max(1, round(1000.0 / scenario.beacon_hz))
    tick_times_ms = list(range(0, span_ms, tick_ms))
    times_s = [t / 1000.0 for t in tick_times_ms]
    pos_x, pos_y = mob.positions_at(times_s)

    always_reachable = reach.mode == "always_on"
    pca_pub = infra.pca.public_key
    gpk = infra.gm.group_public_key
    loss_p = scenario.loss_probability
    loss_rng = child_rng(scenario.seed, "loss")
    verify_ms = profile.verify_ms
    probe_ms = scenario.probe_timeout_ms

    queue = EventQueue()
    for k in range(n_total_slots):
        queue.push(k * tau, EVENT_SLOT)
    for k in range(1, span_ms // gamma + 1):
        queue.push(k * gamma, EVENT_GAMMA)
    for tick_idx, t in enumerate(tick_times_ms):
        queue.push(t, EVENT_BEACON, payload=tick_idx)

    obs_flavors = [[FLAVOR_CODE["silent"]] * pop for _ in range(n_measured)]
    obs_pids = [[""] * pop for _ in range(n_measured)]
    obs_slots = [
        (warmup_ms + k * tau, warmup_ms + (k + 1) * tau) for k in range(n_measured)
    ]

    busy_until = [0] * pop
    pending_acq = [False] * pop
    crl_views = [None] * pop
    seen_pids = [set() for _ in range(pop)]

    def charge_busy(idx, t, cost_ms):
        busy_until[idx] = max(busy_until[idx], t + math.ceil(cost_ms))

    def first_uncovered_slot(state, t):
        s = slot_bounds(grid, t)[0]
        while state.pool.current_vpki(s) is not None:
            s += tau
        return s

    def handle_slot(t):
        for idx in range(pop):
            state = states[idx]
            reachable = always_reachable or reach.is_reachable(idx, t)
            if reachable:
                crl = infra.revocation_list
                view = crl_views[idx]
                if crl.version and (view is None or view.version != crl.version):
                    crl_views[idx] = _CrlView(crl.version, crl.pseudonym_ids)
                if state.misbehavior_reports:
                    for report in state.misbehavior_reports:
                        infra.ra.submit_report(report)
                    trace.add("reports_delivered", t, vehicle=state.identity,
                              count=len(state.misbehavior_reports))
                    state.misbehavior_reports = []
                lookahead = min(2 * tau, span_ms - t)
                if not pending_acq[idx] and state.pool.is_exhausted(t, lookahead):
                    n = grid.slots_per_gamma
                    delay = math.ceil(vpki_acquisition_ms(profile, n))
                    queue.push(t + delay, EVENT_ACQ, idx, n)
                    pending_acq[idx] = True
                    trace.add("acquisition_start", t, vehicle=state.identity, count=n)
            elif state.gsk is not None:
                exhausted_now = state.pool.is_exhausted(t, tau)
                needs_now = exhausted_now and state.pool.current_selfcert(t) is None
                needs_next = (
                    not exhausted_now
                    and t + tau < span_ms
                    and state.pool.is_exhausted(t + tau, tau)
                    and state.pool.current_selfcert(t + tau) is None
                )
                if needs_now or needs_next:
                    try:
                        start = (
                            resolve_slot(state, t)[0]
                            if needs_now
                            else resolve_slot(state, t + tau)[0]
                        )
                        gamma_end = start - (start - state.grid.origin_ms) % gamma + gamma
                        n = max(1, (gamma_end - start) // tau)
                        rhythm_init(state, start, start + tau, n, provider, now_ms=t)
                        charge_busy(idx, t, selfcert_batch_ms(profile, n))
                        trace.add(
                            "rhythm_init", t, vehicle=state.identity,
                            from_ms=start, count=n,
                        )
                    except GridUnknownError as exc:
                        trace.add("grid_unknown", t, vehicle=state.identity,
                                  error=str(exc))

            decision = False
            if state.flag_on(t):
                decision = opt_in_decision(policy, state.opt_in_rng)
                if (
                    decision
                    and not state.keep_switching_after_refill
                    and state.initiated
                    and state.pool.current_vpki(t) is not None
                ):
                    decision = False
            previous = state.active[0] if state.active else None
            result = pseudonym_update(state, t, decision, provider)
            if result.generated:
                charge_busy(idx, t, selfcert_batch_ms(profile, result.generated))
            if result.silent_reason:
                trace.add("silent_slot", t, vehicle=state.identity,
                          reason=result.silent_reason)
                flavor, pid, bounds = "silent", "", (None, None)
            else:
                flavor, pseudonym = state.active
                pid, bounds = pseudonym.id, (pseudonym.t_s_ms, pseudonym.t_e_ms)
            trace.add(
                "slot_mode", t, vehicle=state.identity, mode=flavor, pid=pid,
                t_s_ms=bounds[0], t_e_ms=bounds[1], flag=state.flag_on(t),
                decision=decision, reachable=reachable,
                changed=flavor != previous,
            )
            if t >= warmup_ms:
                k = (t - warmup_ms) // tau
                if k < n_measured:
                    obs_flavors[k][idx] = FLAVOR_CODE[flavor]
                    obs_pids[k][idx] = pid

    def handle_gamma(t):
        for idx in range(pop):
            state = states[idx]
            had_flag = state.flag_active_from is not None
            revert_check(state, t, gamma)
            if had_flag and state.flag_active_from is None:
                trace.add("flag_reverted", t, vehicle=state.identity)

    def handle_acq(t, idx, n):
        state = states[idx]
        pending_acq[idx] = False
        if not (always_reachable or reach.is_reachable(idx, t)):
            trace.add("acquisition_failed", t, vehicle=state.identity,
                      reason="connectivity lost")
            return
        from_t = first_uncovered_slot(state, t)
        pairs = [provider.keygen(state.keygen_rng) for _ in range(n)]
        issued = infra.pca.issue_pseudonyms(
            infra.ltca.issue_ticket(state.identity), from_t, n,
            [kp.public_key for kp in pairs],
        )
        for kp, pseudonym in zip(pairs, issued):
            state.pool.add_vpki(pseudonym)
            state.private_keys[pseudonym.id] = kp.private_key
        trace.add("acquisition_complete", t, vehicle=state.identity, count=n,
                  from_ms=from_t)

    def handle_beacon(t, tick_idx):
        xs = pos_x[tick_idx]
        ys = pos_y[tick_idx]
        if always_reachable:
            reach_now = [True] * pop
        else:
            reach_now = [reach.is_reachable(i, t) for i in range(pop)]
        cams = [None] * pop
        for idx in range(pop):
            state = states[idx]
            if state.active is None:
                state.counters["beacons_suppressed"] += 1
                continue
            if t < busy_until[idx]:
                state.counters["beacons_busy"] += 1
                continue
            cam = build_cam(state, t, provider, (xs[idx], ys[idx]))
            cams[idx] = cam
            if scenario.log_cams:
                trace.add("cam_sent", t, vehicle=state.identity,
                          reachable=reach_now[idx], record=cam.to_record())
        pairs_i, pairs_j = kernels.unit_disk_pairs(xs, ys, scenario.range_m)
        verdicts = {}
        group_verify_ms = profile.group_verify_ms
        lossy = loss_p > 0.0
        for a, b in zip(pairs_i.tolist(), pairs_j.tolist()):
            for sender, receiver in ((a, b), (b, a)):
                cam = cams[sender]
                if cam is None:
                    continue
                if lossy and loss_rng.random() < loss_p:
                    continue
                key = id(cam)
                verified = verdicts.get(key)
                if verified is None:
                    verified = verify_cam(cam, provider, pca_pub, gpk)
                    verdicts[key] = verified
                delay = verify_ms
                seen = seen_pids[receiver]
                att_id = cam.attachment.id
                if att_id not in seen:
                    seen.add(att_id)
                    delay += (
                        group_verify_ms
                        if cam.attachment_flavor == FLAVOR_SELF
                        else verify_ms
                    )
                if cam.flag_rhythm and not reach_now[receiver]:
                    delay += probe_ms
                actions = process_cam(
                    states[receiver], cam, t, reach_now[receiver], provider,
                    pca_pub, gpk, crl=crl_views[receiver], verified=verified,
                    effect_delay_ms=math.ceil(delay),
                )
                if actions:
                    if actions[0] == "set_flag":
                        trace.add(
                            "flag_adopted", t, vehicle=states[receiver].identity,
                            sender_pid=att_id, hops=cam.flag_hops + 1,
                            reachable=reach_now[receiver],
                            active_from_ms=states[receiver].flag_active_from,
                        )
                    elif actions[0] == "drop":
                        trace.add(
                            "cam_dropped", t, vehicle=states[receiver].identity,
                            report="report" in actions,
                        )

    while len(queue):
        t, kind, vehicle, _, payload = queue.pop()
        if kind == EVENT_SLOT:
            handle_slot(t)
        elif kind == EVENT_GAMMA:
            handle_gamma(t)
        elif kind == EVENT_ACQ:
            handle_acq(t, vehicle, payload)
        else:
            handle_beacon(t, payload)

    totals = {}
    for state in states:
        for key, value in state.counters.items():
            totals[key] = totals.get(key, 0) + value
    trace.add("summary", span_ms, counters=totals,
              exhausted=[states[i].identity for i in sorted(exhausted_set)])

    log = ObservationLog(vehicle_ids, obs_slots, obs_flavors, obs_pids)
    return trace, log
