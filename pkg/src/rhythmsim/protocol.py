"""Per-vehicle protocol state machine for the randomized hybrid scheme.

A vehicle that cannot refill its pseudonym pool generates grid-aligned
self-certified pseudonyms, group-signs them, and raises a flag in its CAMs.
Receivers that confirm the infrastructure outage adopt the flag (epidemic
relay) and then, at every slot boundary while the flag lives, opt in to a
self-certified slot with probability r. The flag never outlives the current
gamma window unless a fresh initiation is observed.

All state mutation happens through the functions below; the simulation engine
owns the call order.
"""

import struct
from dataclasses import dataclass

from .credentials import (
    FLAVOR_SELF,
    FLAVOR_VPKI,
    GridUnknownError,
    PseudonymPool,
    SelfCertifiedPseudonym,
    TimeGrid,
    certified_payload,
    gamma_bounds,
    infer_grid_from_neighbor,
    pseudonym_id,
    slot_bounds,
)


class BeaconSuppressed(RuntimeError):
    """No currently valid signing key: the vehicle cannot beacon."""


class HsmError(RuntimeError):
    pass


class InitiationError(RuntimeError):
    pass


class HsmSlot:
    """Holds at most one private key; refuses a second simultaneously-valid one."""

    def __init__(self):
        self._key = None  # (private_key, t_s_ms, t_e_ms)

    def load(self, private_key: bytes, t_s_ms: int, t_e_ms: int):
        if self._key is not None:
            _, cur_s, cur_e = self._key
            if t_s_ms < cur_e and cur_s < t_e_ms:
                raise HsmError(
                    f"refusing simultaneously-valid key: [{t_s_ms},{t_e_ms}) "
                    f"overlaps loaded [{cur_s},{cur_e})"
                )
        self._key = (private_key, t_s_ms, t_e_ms)

    def clear(self):
        self._key = None

    def current(self, t_ms: int):
        if self._key is None:
            return None
        key, t_s, t_e = self._key
        return key if t_s <= t_ms < t_e else None

    def sign(self, provider, message: bytes, t_ms: int) -> bytes:
        key = self.current(t_ms)
        if key is None:
            raise HsmError("no key valid at signing time")
        return provider.sign(key, message)


@dataclass(frozen=True)
class OptInPolicy:
    """Per-update randomized opt-in with probability r."""

    r: float

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"r must be in [0,1], got {self.r}")


def opt_in_decision(policy: OptInPolicy, rng) -> bool:
    """One independent Bernoulli(r) draw per pseudonym update."""
    return rng.random() < policy.r


@dataclass(frozen=True)
class Cam:
    """Signed awareness beacon. Field order is fixed for serialization:
    fields (x, y, hops, stamp), flag, t_now, attachment, signature.

    flag_stamp is the gamma index of the initiation a carried flag descends
    from; relays propagate it unchanged, so receivers can tell a fresh
    initiation request from last gamma's echo when deciding whether the flag
    survives the gamma boundary.
    """

    x: float
    y: float
    flag_hops: int
    flag_stamp: int
    flag_rhythm: bool
    t_now_ms: int
    attachment_flavor: str
    attachment: object  # VpkiPseudonym | SelfCertifiedPseudonym
    signature: bytes

    def payload_bytes(self) -> bytes:
        return cam_payload_bytes(
            self.x, self.y, self.flag_hops, self.flag_stamp, self.flag_rhythm,
            self.t_now_ms, self.attachment_flavor, self.attachment,
        )

    def to_record(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "hops": self.flag_hops,
            "stamp": self.flag_stamp,
            "flag": self.flag_rhythm,
            "t_now_ms": self.t_now_ms,
            "attachment": {
                "flavor": self.attachment_flavor,
                "id": self.attachment.id,
                "t_s_ms": self.attachment.t_s_ms,
                "t_e_ms": self.attachment.t_e_ms,
            },
            "signature": self.signature.hex(),
        }


def cam_payload_bytes(x, y, hops, stamp, flag, t_now_ms, flavor, attachment) -> bytes:
    head = struct.pack("<ddiq?q", x, y, hops, stamp, flag, t_now_ms)
    cert = (
        attachment.issuer_signature
        if flavor == FLAVOR_VPKI
        else attachment.group_signature
    )
    body = certified_payload(attachment.public_key, attachment.t_s_ms, attachment.t_e_ms)
    return head + flavor.encode() + b"|" + body + b"|" + cert


class VehicleState:
    """Everything one vehicle carries between events."""

    def __init__(
        self,
        identity: str,
        index: int,
        gamma_ms: int,
        tau_p_ms: int,
        opt_in_rng,
        keygen_rng,
        gsk=None,
        grid: TimeGrid | None = None,
        clock_offset_ms: int = 0,
        keep_switching_after_refill: bool = True,
        max_flag_hops: int | None = None,
    ):
        self.identity = identity
        self.index = index
        # Gamma and tau_P are region-wide constants every vehicle knows; what a
        # vehicle may lack is the grid *origin* (self.grid is None until
        # aligned from its own history or a neighbor CAM).
        self.gamma_ms = gamma_ms
        self.tau_p_ms = tau_p_ms
        self.pool = PseudonymPool()
        self.mode = FLAVOR_VPKI
        self.gsk = gsk
        self.grid = grid
        self.clock_offset_ms = clock_offset_ms
        self.keep_switching_after_refill = keep_switching_after_refill
        self.max_flag_hops = max_flag_hops
        self.hsm = HsmSlot()
        self.opt_in_rng = opt_in_rng
        self.keygen_rng = keygen_rng
        self.private_keys = {}  # pseudonym id -> private key
        self.active = None  # (flavor, pseudonym) loaded in the HSM
        self.flag_active_from = None
        self.flag_expires_ms = None
        self.flag_hops = 0
        self.flag_stamp = -1  # gamma index of the originating initiation
        self.initiated = False
        self.saw_initiation_in_gamma = False
        self.last_seen_slot = None  # neighbor attachment (t_s, t_e) for inference
        self.misbehavior_reports = []
        self.counters = {
            "beacons_sent": 0,
            "beacons_suppressed": 0,
            "beacons_busy": 0,
            "cams_received": 0,
            "cams_dropped": 0,
            "flags_ignored": 0,
            "flag_adoptions": 0,
            "opt_ins": 0,
            "selfcert_generated": 0,
            "silent_slots": 0,
        }

    def flag_on(self, t_ms: int) -> bool:
        return (
            self.flag_active_from is not None
            and self.flag_active_from <= t_ms < self.flag_expires_ms
        )

    def flag_armed(self, t_ms: int) -> bool:
        """Flag set now or pending activation (processing delay not yet elapsed)."""
        return self.flag_active_from is not None and t_ms < self.flag_expires_ms

    def arm_flag(self, from_ms: int, until_ms: int):
        self.flag_active_from = from_ms
        self.flag_expires_ms = until_ms

    def clear_flag(self):
        self.flag_active_from = None
        self.flag_expires_ms = None
        self.flag_hops = 0
        self.flag_stamp = -1

    def gamma_index(self, t_ms: int) -> int:
        origin = self.grid.origin_ms if self.grid is not None else 0
        return (t_ms - origin) // self.gamma_ms


def resolve_slot(state: VehicleState, t_ms: int):
    """The aligned slot containing t, from own grid or a neighbor observation.

    Reconstructs and stores the grid from a piggybacked neighbor slot when the
    vehicle has none; with no neighbor observation either, raises
    GridUnknownError (the vehicle stays silent rather than guessing).
    """
    if state.grid is None:
        if state.last_seen_slot is None:
            raise GridUnknownError(
                f"{state.identity}: no grid history and no neighbor observation"
            )
        offset = infer_grid_from_neighbor(state.last_seen_slot, state.tau_p_ms)
        state.grid = TimeGrid(state.gamma_ms, state.tau_p_ms, origin_ms=offset)
    return slot_bounds(state.grid, t_ms)


def make_selfcert(state: VehicleState, slots, provider):
    """Generate, align, and group-sign one self-certified pseudonym per slot."""
    if state.gsk is None:
        raise InitiationError(f"{state.identity}: no group signing key")
    out = []
    for t_s, t_e in slots:
        pair = provider.keygen(state.keygen_rng)
        payload = certified_payload(pair.public_key, t_s, t_e)
        gsig = provider.group_sign(state.gsk, payload)
        p = SelfCertifiedPseudonym(
            id=pseudonym_id(pair.public_key, t_s),
            public_key=pair.public_key,
            t_s_ms=t_s,
            t_e_ms=t_e,
            group_signature=gsig,
        )
        state.pool.add_selfcert(p)
        state.private_keys[p.id] = pair.private_key
        state.counters["selfcert_generated"] += 1
        out.append(p)
    return out


def rhythm_init(state: VehicleState, t_s_ms: int, t_e_ms: int, n: int, provider, now_ms=None):
    """Initiation procedure: n aligned self-certified pseudonyms from (t_s, t_e),
    flag raised immediately and kept until the end of the enclosing gamma window.

    now_ms: time of the initiating decision when it precedes t_s (look-ahead
    initiation during the last valid slot); defaults to t_s.
    """
    if state.grid is None:
        raise InitiationError(f"{state.identity}: grid unknown; infer from a neighbor first")
    tau = state.grid.tau_p_ms
    if t_e_ms - t_s_ms != tau or (t_s_ms - state.grid.origin_ms) % tau != 0:
        raise InitiationError(f"initiation slot ({t_s_ms},{t_e_ms}) is not grid-aligned")
    slots = [(t_s_ms + i * tau, t_e_ms + i * tau) for i in range(n)]
    batch = make_selfcert(state, slots, provider)
    _, gamma_end = gamma_bounds(state.grid, t_s_ms)
    from_ms = t_s_ms if now_ms is None else min(now_ms, t_s_ms)
    if state.flag_active_from is not None:
        from_ms = min(state.flag_active_from, from_ms)
    until_ms = gamma_end if state.flag_expires_ms is None else max(state.flag_expires_ms, gamma_end)
    state.arm_flag(from_ms, until_ms)
    state.flag_hops = 0
    state.flag_stamp = state.gamma_index(from_ms if now_ms is None else now_ms)
    state.initiated = True
    state.saw_initiation_in_gamma = True
    return batch


def build_cam(state: VehicleState, t_ms: int, provider, position=(0.0, 0.0)) -> Cam:
    """Sign a beacon under the HSM key; attachment mirrors the current mode."""
    if state.active is None:
        raise BeaconSuppressed(f"{state.identity}: no active pseudonym")
    flavor, pseudonym = state.active
    if not pseudonym.valid_at(t_ms):
        raise BeaconSuppressed(f"{state.identity}: active pseudonym expired")
    flag = state.flag_on(t_ms)
    hops = state.flag_hops if flag else 0
    stamp = state.flag_stamp if flag else -1
    payload = cam_payload_bytes(
        position[0], position[1], hops, stamp, flag, t_ms, flavor, pseudonym
    )
    signature = state.hsm.sign(provider, payload, t_ms)
    state.counters["beacons_sent"] += 1
    return Cam(
        x=position[0], y=position[1], flag_hops=hops, flag_stamp=stamp,
        flag_rhythm=flag, t_now_ms=t_ms, attachment_flavor=flavor,
        attachment=pseudonym, signature=signature,
    )


def verify_cam(cam: Cam, provider, pca_public_key: bytes, group_public_key) -> bool:
    """Both layers: attachment certification, then the message signature."""
    att = cam.attachment
    if not (att.t_s_ms <= cam.t_now_ms < att.t_e_ms):
        return False
    body = certified_payload(att.public_key, att.t_s_ms, att.t_e_ms)
    if cam.attachment_flavor == FLAVOR_VPKI:
        if not provider.verify(pca_public_key, body, att.issuer_signature):
            return False
    elif cam.attachment_flavor == FLAVOR_SELF:
        if not provider.group_verify(group_public_key, body, att.group_signature):
            return False
    else:
        return False
    return provider.verify(att.public_key, cam.payload_bytes(), cam.signature)


def process_cam(
    state: VehicleState,
    cam: Cam,
    t_ms: int,
    vpki_reachable: bool,
    provider,
    pca_public_key: bytes,
    group_public_key,
    crl=None,
    verified: bool | None = None,
    effect_delay_ms: int = 0,
) -> list:
    """Receiver-side handling; returns the action names taken.

    verified: pre-computed verdict of verify_cam for this exact CAM (the
    engine memoizes it across receivers of one broadcast); recomputed here
    when None. effect_delay_ms: virtual processing cost (certificate
    verification, reachability probe) separating reception from the flag
    taking effect.
    """
    state.counters["cams_received"] += 1
    if verified is None:
        verified = verify_cam(cam, provider, pca_public_key, group_public_key)
    if not verified:
        state.counters["cams_dropped"] += 1
        state.misbehavior_reports.append({"t_ms": t_ms, "evidence": cam.to_record()})
        return ["drop", "report"]
    if crl is not None and crl.covers_pseudonym(cam.attachment.id):
        state.counters["cams_dropped"] += 1
        return ["drop"]

    att = cam.attachment
    state.last_seen_slot = (att.t_s_ms, att.t_e_ms)

    if not cam.flag_rhythm:
        return []
    if vpki_reachable:
        state.counters["flags_ignored"] += 1
        return ["ignore_flag"]
    if state.max_flag_hops is not None and cam.flag_hops >= state.max_flag_hops:
        state.counters["flags_ignored"] += 1
        return ["ignore_flag"]

    if state.grid is None:
        # Alignment piggybacks on the flagged CAM itself.
        if att.t_e_ms - att.t_s_ms != state.tau_p_ms:
            state.counters["flags_ignored"] += 1
            return ["ignore_flag"]
        offset = infer_grid_from_neighbor((att.t_s_ms, att.t_e_ms), state.tau_p_ms)
        state.grid = TimeGrid(state.gamma_ms, state.tau_p_ms, origin_ms=offset)
    if cam.flag_stamp >= state.gamma_index(t_ms):
        # A fresh initiation request, not last gamma's echo.
        state.saw_initiation_in_gamma = True
    if state.flag_armed(t_ms):
        if cam.flag_stamp > state.flag_stamp:
            state.flag_stamp = cam.flag_stamp
        return []
    _, gamma_end = gamma_bounds(state.grid, t_ms)
    state.arm_flag(t_ms + effect_delay_ms, gamma_end)
    state.flag_hops = cam.flag_hops + 1
    state.flag_stamp = cam.flag_stamp
    state.counters["flag_adoptions"] += 1
    return ["set_flag", "relay", "schedule_opt_in"]


@dataclass(frozen=True)
class UpdateResult:
    mode: str
    generated: int = 0
    silent_reason: str | None = None


def pseudonym_update(state: VehicleState, t_ms: int, decision: bool, provider) -> UpdateResult:
    """Slot-boundary mode selection and HSM reload.

    Flagged + opted-in -> self-certified (generated now if missing); else a
    covering VPKI credential wins; a vehicle with neither falls back to
    self-certified generation (the disconnected case) or goes silent.
    """
    state.pool.drop_expired(t_ms)
    generated = 0
    vpkip = state.pool.current_vpki(t_ms)
    selfp = state.pool.current_selfcert(t_ms)
    flag = state.flag_on(t_ms)

    silent_reason = None
    choice = None
    if flag and decision and state.gsk is not None:
        if selfp is None:
            try:
                selfp = make_selfcert(state, [resolve_slot(state, t_ms)], provider)[0]
                generated = 1
            except GridUnknownError:
                selfp = None
        if selfp is not None:
            choice = (FLAVOR_SELF, selfp)
            state.counters["opt_ins"] += 1
    if choice is None:
        if vpkip is not None:
            choice = (FLAVOR_VPKI, vpkip)
        elif selfp is not None:
            choice = (FLAVOR_SELF, selfp)
        elif state.gsk is not None:
            try:
                selfp = make_selfcert(state, [resolve_slot(state, t_ms)], provider)[0]
                generated = 1
                choice = (FLAVOR_SELF, selfp)
            except GridUnknownError:
                silent_reason = "grid unknown"
        else:
            silent_reason = "no group signing key"

    if choice is None:
        state.hsm.clear()
        state.active = None
        state.counters["silent_slots"] += 1
        return UpdateResult(mode=state.mode, generated=0, silent_reason=silent_reason or "no credential")

    flavor, pseudonym = choice
    # No clear-before-load: the HSM itself must accept the reload, which it
    # does exactly when the outgoing key has expired (half-open intervals).
    state.hsm.load(state.private_keys[pseudonym.id], pseudonym.t_s_ms, pseudonym.t_e_ms)
    state.active = (flavor, pseudonym)
    state.mode = flavor
    return UpdateResult(mode=flavor, generated=generated)


def revert_check(state: VehicleState, t_ms: int, gamma_ms: int):
    """Gamma-boundary rule: the flag dies with a quiet gamma, persists after a
    fresh initiation, and always resets the per-gamma observation."""
    if state.flag_active_from is not None and state.flag_expires_ms is not None:
        if state.flag_expires_ms <= t_ms:
            if state.saw_initiation_in_gamma and state.flag_expires_ms == t_ms:
                # Initiation seen during the ended gamma: ride into the next one.
                state.flag_expires_ms = t_ms + gamma_ms
            else:
                state.clear_flag()
    state.saw_initiation_in_gamma = False
    return state
