"""Vehicle state machine: initiation, CAM handling, opt-in, HSM, revert."""

import random

import pytest

from rhythmsim.credentials import (
    FLAVOR_SELF,
    FLAVOR_VPKI,
    TimeGrid,
    certified_payload,
)
from rhythmsim.crypto import MockProvider
from rhythmsim.protocol import (
    BeaconSuppressed,
    HsmError,
    HsmSlot,
    InitiationError,
    OptInPolicy,
    VehicleState,
    build_cam,
    cam_payload_bytes,
    opt_in_decision,
    process_cam,
    pseudonym_update,
    resolve_slot,
    revert_check,
    rhythm_init,
    verify_cam,
)
from rhythmsim.util import child_rng
from rhythmsim.vpki import Infrastructure

GRID = TimeGrid.from_seconds(600, 60)
TAU = GRID.tau_p_ms
PROVIDER = MockProvider()


def make_world(*identities, pool_slots=0):
    infra = Infrastructure(PROVIDER, GRID, seed=9)
    states = []
    for idx, identity in enumerate(identities):
        infra.ltca.register(identity)
        gsk = infra.gm.register(infra.ltca.issue_ticket(identity))
        state = VehicleState(
            identity=identity, index=idx, gamma_ms=GRID.gamma_ms, tau_p_ms=TAU,
            opt_in_rng=child_rng(1, "optin", idx), keygen_rng=child_rng(1, "kg", idx),
            gsk=gsk, grid=GRID,
        )
        if pool_slots:
            pairs = [PROVIDER.keygen(state.keygen_rng) for _ in range(pool_slots)]
            issued = infra.pca.issue_pseudonyms(
                infra.ltca.issue_ticket(identity), 0, pool_slots,
                [kp.public_key for kp in pairs],
            )
            for kp, p in zip(pairs, issued):
                state.pool.add_vpki(p)
                state.private_keys[p.id] = kp.private_key
        states.append(state)
    return infra, states


def test_opt_in_extremes():
    rng = random.Random(0)
    assert all(not opt_in_decision(OptInPolicy(0.0), rng) for _ in range(1000))
    assert all(opt_in_decision(OptInPolicy(1.0), rng) for _ in range(1000))
    with pytest.raises(ValueError):
        OptInPolicy(1.5)


def test_opt_in_frequency_matches_r():
    # Law of large numbers at 1e5 draws: frequency within +-0.01 of r.
    rng = random.Random(12345)
    policy = OptInPolicy(0.5)
    hits = sum(opt_in_decision(policy, rng) for _ in range(100_000))
    assert abs(hits / 100_000 - 0.5) < 0.01


def test_rhythm_init_tiles_a_gamma_tail():
    _, (state,) = make_world("V1")
    batch = rhythm_init(state, 600_000, 660_000, 10, PROVIDER)
    assert [(p.t_s_ms, p.t_e_ms) for p in batch][0] == (600_000, 660_000)
    assert batch[-1].t_e_ms == 1_200_000
    for (a, b) in zip(batch, batch[1:]):
        assert a.t_e_ms == b.t_s_ms
    assert state.flag_armed(600_000)
    assert state.flag_expires_ms == 1_200_000  # gamma end


def test_rhythm_init_signatures_verify_and_open_to_initiator(make=make_world):
    infra, (state,) = make("V1")
    batch = rhythm_init(state, 0, 60_000, 5, PROVIDER)
    for p in batch:
        body = certified_payload(p.public_key, p.t_s_ms, p.t_e_ms)
        assert PROVIDER.group_verify(infra.gm.group_public_key, body, p.group_signature)
        identity, transcript = infra.ra.resolve((body, p.group_signature))
        assert identity == "V1"
        assert "GM" in transcript


def test_rhythm_init_after_inference_from_neighbor():
    # Expired pool, grid origin unknown; one neighbor observation (540 s, 600 s)
    # aligns the next credential at (600 s, 660 s).
    _, (state,) = make_world("V1")
    state.grid = None
    state.last_seen_slot = (540_000, 600_000)
    slot = resolve_slot(state, 600_000)
    assert slot == (600_000, 660_000)
    batch = rhythm_init(state, *slot, 1, PROVIDER)
    assert (batch[0].t_s_ms, batch[0].t_e_ms) == (600_000, 660_000)


def test_rhythm_init_requires_grid():
    _, (state,) = make_world("V1")
    state.grid = None
    with pytest.raises(InitiationError):
        rhythm_init(state, 0, 60_000, 1, PROVIDER)
    from rhythmsim.credentials import GridUnknownError

    with pytest.raises(GridUnknownError):
        resolve_slot(state, 0)


def test_rhythm_init_rejects_misaligned_slot():
    _, (state,) = make_world("V1")
    with pytest.raises(InitiationError):
        rhythm_init(state, 10_000, 70_000, 1, PROVIDER)


def test_build_cam_flavors_follow_mode():
    infra, (state,) = make_world("V1", pool_slots=2)
    pseudonym_update(state, 0, False, PROVIDER)
    cam = build_cam(state, 1_000, PROVIDER)
    assert cam.attachment_flavor == FLAVOR_VPKI
    assert verify_cam(cam, PROVIDER, infra.pca.public_key, infra.gm.group_public_key)

    rhythm_init(state, 60_000, 120_000, 1, PROVIDER)
    pseudonym_update(state, 60_000, True, PROVIDER)
    cam2 = build_cam(state, 61_000, PROVIDER)
    assert cam2.attachment_flavor == FLAVOR_SELF
    assert cam2.flag_rhythm
    assert verify_cam(cam2, PROVIDER, infra.pca.public_key, infra.gm.group_public_key)


def test_build_cam_with_expired_key_raises():
    _, (state,) = make_world("V1", pool_slots=1)
    pseudonym_update(state, 0, False, PROVIDER)
    with pytest.raises(BeaconSuppressed):
        build_cam(state, 60_000, PROVIDER)  # slot ended at 60 s
    state.active = None
    with pytest.raises(BeaconSuppressed):
        build_cam(state, 1_000, PROVIDER)


def test_process_cam_adopts_flag_when_unreachable():
    infra, (sender, receiver) = make_world("V1", "V2", pool_slots=2)
    rhythm_init(sender, 0, 60_000, 1, PROVIDER)
    pseudonym_update(sender, 0, True, PROVIDER)
    pseudonym_update(receiver, 0, False, PROVIDER)
    cam = build_cam(sender, 100, PROVIDER)
    actions = process_cam(
        receiver, cam, 100, False, PROVIDER,
        infra.pca.public_key, infra.gm.group_public_key, effect_delay_ms=85,
    )
    assert actions == ["set_flag", "relay", "schedule_opt_in"]
    assert receiver.flag_active_from == 185  # reception + processing delay
    assert receiver.flag_expires_ms == 600_000
    assert not receiver.flag_on(100)
    assert receiver.flag_on(185)


def test_process_cam_ignores_flag_when_reachable():
    infra, (sender, receiver) = make_world("V1", "V2", pool_slots=2)
    rhythm_init(sender, 0, 60_000, 1, PROVIDER)
    pseudonym_update(sender, 0, True, PROVIDER)
    pseudonym_update(receiver, 0, False, PROVIDER)
    cam = build_cam(sender, 100, PROVIDER)
    actions = process_cam(
        receiver, cam, 100, True, PROVIDER,
        infra.pca.public_key, infra.gm.group_public_key,
    )
    assert actions == ["ignore_flag"]
    assert receiver.flag_active_from is None
    assert receiver.counters["flags_ignored"] == 1


def test_process_cam_drops_and_reports_tampered_signature():
    import dataclasses

    infra, (sender, receiver) = make_world("V1", "V2", pool_slots=2)
    pseudonym_update(sender, 0, False, PROVIDER)
    pseudonym_update(receiver, 0, False, PROVIDER)
    cam = build_cam(sender, 100, PROVIDER)
    sig = bytearray(cam.signature)
    sig[0] ^= 1
    tampered = dataclasses.replace(cam, signature=bytes(sig))
    actions = process_cam(
        receiver, tampered, 100, False, PROVIDER,
        infra.pca.public_key, infra.gm.group_public_key,
    )
    assert actions == ["drop", "report"]
    assert len(receiver.misbehavior_reports) == 1


def test_process_cam_drops_revoked_sender():
    infra, (sender, receiver) = make_world("V1", "V2", pool_slots=2)
    pseudonym_update(sender, 0, False, PROVIDER)
    pseudonym_update(receiver, 0, False, PROVIDER)
    cam = build_cam(sender, 100, PROVIDER)
    infra.ra.revoke("V1")
    actions = process_cam(
        receiver, cam, 100, False, PROVIDER,
        infra.pca.public_key, infra.gm.group_public_key,
        crl=infra.revocation_list,
    )
    assert actions == ["drop"]


def test_process_cam_infers_grid_from_flagged_cam():
    infra, (sender, receiver) = make_world("V1", "V2", pool_slots=2)
    rhythm_init(sender, 0, 60_000, 1, PROVIDER)
    pseudonym_update(sender, 0, True, PROVIDER)
    receiver.grid = None
    cam = build_cam(sender, 100, PROVIDER)
    actions = process_cam(
        receiver, cam, 100, False, PROVIDER,
        infra.pca.public_key, infra.gm.group_public_key,
    )
    assert actions[0] == "set_flag"
    assert receiver.grid is not None
    assert receiver.grid.origin_ms == 0


def test_pseudonym_update_cases():
    _, (state,) = make_world("V1", pool_slots=2)
    # connected vehicle, flag off -> VPKI
    res = pseudonym_update(state, 0, False, PROVIDER)
    assert res.mode == FLAVOR_VPKI
    # flag on, opted in -> self-certified, generated on the fly
    state.arm_flag(0, 600_000)
    res = pseudonym_update(state, 60_000, True, PROVIDER)
    assert res.mode == FLAVOR_SELF
    assert res.generated == 1


def test_pseudonym_update_forces_selfcert_when_exhausted():
    _, (state,) = make_world("V1")  # empty pool
    res = pseudonym_update(state, 0, False, PROVIDER)
    assert res.mode == FLAVOR_SELF  # decision irrelevant: only option
    assert state.active[0] == FLAVOR_SELF


def test_pseudonym_update_silent_without_gsk():
    _, (state,) = make_world("V1")
    state.gsk = None
    res = pseudonym_update(state, 0, False, PROVIDER)
    assert res.silent_reason == "no group signing key"
    assert state.active is None
    assert state.counters["silent_slots"] == 1


def test_pseudonym_update_silent_when_grid_unknown():
    _, (state,) = make_world("V1")
    state.grid = None
    res = pseudonym_update(state, 0, False, PROVIDER)
    assert res.silent_reason == "grid unknown"


def test_hsm_rejects_second_valid_key():
    hsm = HsmSlot()
    hsm.load(b"k1", 0, 60_000)
    with pytest.raises(HsmError):
        hsm.load(b"k2", 30_000, 90_000)
    with pytest.raises(HsmError):
        hsm.load(b"k2", 0, 60_000)
    hsm.load(b"k2", 60_000, 120_000)  # half-open: boundary reload is legal
    assert hsm.current(60_000) == b"k2"
    assert hsm.current(59_999) is None


def test_hsm_sign_requires_valid_key():
    hsm = HsmSlot()
    with pytest.raises(HsmError):
        hsm.sign(PROVIDER, b"m", 0)
    pair = PROVIDER.keygen(random.Random(0))
    hsm.load(pair.private_key, 0, 1000)
    with pytest.raises(HsmError):
        hsm.sign(PROVIDER, b"m", 1000)
    assert hsm.sign(PROVIDER, b"m", 999)


def test_revert_clears_flag_after_quiet_gamma():
    _, (state,) = make_world("V1", pool_slots=20)
    state.arm_flag(10_000, 600_000)
    state.saw_initiation_in_gamma = False
    revert_check(state, 600_000, GRID.gamma_ms)
    assert state.flag_active_from is None


def test_revert_keeps_flag_after_fresh_initiation():
    _, (state,) = make_world("V1", pool_slots=20)
    state.arm_flag(10_000, 600_000)
    state.saw_initiation_in_gamma = True  # initiation seen at gamma - tau_P
    revert_check(state, 600_000, GRID.gamma_ms)
    assert state.flag_on(600_000)
    assert state.flag_expires_ms == 1_200_000
    # ...and the observation marker resets for the new gamma.
    assert not state.saw_initiation_in_gamma


def test_refilled_initiator_keeps_switching_when_configured():
    _, (state,) = make_world("V1", pool_slots=20)
    state.initiated = True
    state.arm_flag(0, 600_000)
    res = pseudonym_update(state, 60_000, True, PROVIDER)
    assert res.mode == FLAVOR_SELF  # privacy-preferred switching despite stock


def test_stale_flag_stamp_does_not_refresh():
    import dataclasses

    infra, (sender, receiver) = make_world("V1", "V2", pool_slots=2)
    rhythm_init(sender, 0, 60_000, 1, PROVIDER)
    pseudonym_update(sender, 0, True, PROVIDER)
    pseudonym_update(receiver, 0, False, PROVIDER)
    cam = build_cam(sender, 100, PROVIDER)
    # Replay the same flag one gamma later: stamp 0 < current gamma index 1.
    receiver.saw_initiation_in_gamma = False
    stale = dataclasses.replace(cam, t_now_ms=cam.t_now_ms)
    process_cam(
        receiver, stale, 600_100, False, PROVIDER,
        infra.pca.public_key, infra.gm.group_public_key, verified=True,
    )
    assert not receiver.saw_initiation_in_gamma  # echo does not refresh
    assert receiver.flag_armed(600_100)  # but the flag itself is set until gamma end


def test_cam_serialization_record_fields():
    _, (state,) = make_world("V1", pool_slots=1)
    pseudonym_update(state, 0, False, PROVIDER)
    cam = build_cam(state, 500, PROVIDER, position=(12.5, 7.25))
    record = cam.to_record()
    assert list(record) == ["x", "y", "hops", "stamp", "flag", "t_now_ms", "attachment", "signature"]
    assert record["x"] == 12.5
    assert record["attachment"]["flavor"] == FLAVOR_VPKI
    assert cam.payload_bytes() == cam_payload_bytes(
        cam.x, cam.y, cam.flag_hops, cam.flag_stamp, cam.flag_rhythm,
        cam.t_now_ms, cam.attachment_flavor, cam.attachment,
    )
