"""Provider correctness, latency profile values, and anonymity shape."""

import random

import pytest

from rhythmsim.crypto import (
    CryptoProfile,
    MalformedKeyError,
    MockProvider,
    OpenError,
    ProviderUnavailable,
    UnjoinedKeyError,
    estimate_slot_overhead_ms,
    get_provider,
    latency_of,
    selfcert_batch_ms,
    verify_budget,
    vpki_acquisition_ms,
)

MOCK = MockProvider()


def test_keygen_deterministic_under_seed():
    a = MOCK.keygen(random.Random(42))
    b = MOCK.keygen(random.Random(42))
    c = MOCK.keygen(random.Random(43))
    assert a == b
    assert a.public_key != c.public_key


def test_sign_verify_roundtrip():
    pair = MOCK.keygen(random.Random(42))
    sig = MOCK.sign(pair.private_key, b"cam")
    assert MOCK.verify(pair.public_key, b"cam", sig)


def test_verify_rejects_tampering():
    pair = MOCK.keygen(random.Random(1))
    other = MOCK.keygen(random.Random(2))
    sig = MOCK.sign(pair.private_key, b"m")
    flipped = bytes([sig[0] ^ 1]) + sig[1:]
    assert not MOCK.verify(pair.public_key, b"m" + b"x", sig)
    assert not MOCK.verify(pair.public_key, b"m", flipped)
    assert not MOCK.verify(other.public_key, b"m", sig)


def test_malformed_key_distinct_from_invalid_signature():
    with pytest.raises(MalformedKeyError):
        MOCK.sign(b"short", b"m")
    with pytest.raises(MalformedKeyError):
        MOCK.verify(b"short", b"m", b"sig")


def test_group_roundtrip_and_opening():
    gpk, issuing, opening = MOCK.group_setup(random.Random(7))
    gsk_a = MOCK.group_join(issuing, "A")
    gsk_b = MOCK.group_join(issuing, "B")
    sig_a = MOCK.group_sign(gsk_a, b"zeta")
    sig_b = MOCK.group_sign(gsk_b, b"zeta")
    assert MOCK.group_verify(gpk, b"zeta", sig_a)
    assert MOCK.group_open(opening, b"zeta", sig_a) == "A"
    assert MOCK.group_open(opening, b"zeta", sig_b) == "B"
    assert not MOCK.group_verify(gpk, b"zeta", sig_a[:-3])
    with pytest.raises(OpenError):
        MOCK.group_open(opening, b"zeta", sig_a[:-3])


def test_unjoined_group_key_refused():
    gpk, issuing, _ = MOCK.group_setup(random.Random(7))
    gsk = MOCK.group_join(issuing, "A")
    forged = type(gsk)(
        identity="M", secret=gsk.secret, enc_key=b"\x00" * 32, gpk=gpk, cert=gsk.cert
    )
    with pytest.raises(UnjoinedKeyError):
        MOCK.group_sign(forged, b"m")


def test_thousand_roundtrips_with_mutation_rejection():
    rng = random.Random(99)
    for i in range(1000):
        pair = MOCK.keygen(rng)
        msg = rng.randbytes(40)
        sig = MOCK.sign(pair.private_key, msg)
        assert MOCK.verify(pair.public_key, msg, sig)
        pos = rng.randrange(len(msg))
        mutated = bytes(msg[:pos]) + bytes([msg[pos] ^ (1 << rng.randrange(8))]) + msg[pos + 1:]
        assert not MOCK.verify(pair.public_key, mutated, sig)


def test_opening_soundness_over_many_signatures():
    rng = random.Random(5)
    gpk, issuing, opening = MOCK.group_setup(rng)
    members = {name: MOCK.group_join(issuing, name) for name in ("v1", "v2", "v3")}
    for i in range(300):
        name = ("v1", "v2", "v3")[i % 3]
        msg = rng.randbytes(24)
        gsig = MOCK.group_sign(members[name], msg)
        assert MOCK.group_verify(gpk, msg, gsig)
        assert MOCK.group_open(opening, msg, gsig) == name


def test_group_signature_shape_hides_member():
    # No byte position may be constant within each member's signatures while
    # differing across members: that would be a member identifier in the clear.
    rng = random.Random(13)
    _, issuing, _ = MOCK.group_setup(rng)
    gsk_a = MOCK.group_join(issuing, "AA")
    gsk_b = MOCK.group_join(issuing, "BB")
    msgs = [rng.randbytes(16) for _ in range(40)]
    sigs_a = [MOCK.group_sign(gsk_a, m) for m in msgs]
    sigs_b = [MOCK.group_sign(gsk_b, m) for m in msgs]
    assert len({len(s) for s in sigs_a + sigs_b}) == 1
    for pos in range(len(sigs_a[0])):
        a_vals = {s[pos] for s in sigs_a}
        b_vals = {s[pos] for s in sigs_b}
        leaks = len(a_vals) == 1 and len(b_vals) == 1 and a_vals != b_vals
        assert not leaks, f"byte {pos} identifies the member"


def test_latency_profile_reference_values():
    profile = CryptoProfile()
    assert latency_of(profile, "group_sign") == 56.0
    assert latency_of(profile, "group_verify") == 82.5
    zero = CryptoProfile.zero()
    for kind in ("sign", "verify", "group_sign", "group_verify"):
        assert latency_of(zero, kind) == 0.0
    with pytest.raises(ValueError):
        latency_of(profile, "keygen")


def test_profile_validation_and_dict_roundtrip():
    with pytest.raises(ValueError):
        CryptoProfile(sign_ms=-1.0)
    with pytest.raises(ValueError):
        CryptoProfile.from_dict({"sign_ms": 1.0, "bogus": 2.0})
    profile = CryptoProfile.from_dict({"group_sign_ms": 10.0})
    assert profile.group_sign_ms == 10.0
    assert CryptoProfile.from_dict(profile.to_dict()) == profile


def test_acquisition_overhead_difference_is_287ms():
    # Self-certified batch of 10 vs the VPKI acquisition path at defaults.
    profile = CryptoProfile()
    extra = selfcert_batch_ms(profile, 10) - vpki_acquisition_ms(profile, 10)
    assert extra == pytest.approx(287.0)


def test_verify_budget_and_overhead_estimator():
    profile = CryptoProfile()
    assert verify_budget(profile, 1000.0, "group_verify") == pytest.approx(1000.0 / 82.5)
    assert verify_budget(CryptoProfile.zero(), 1000.0) == float("inf")
    overhead = estimate_slot_overhead_ms(profile, 0.2, 600, 0.5, 0.1)
    assert overhead == pytest.approx(0.2 * 57.0 + 600 * 0.5 * 0.1 * 80.5)
    assert estimate_slot_overhead_ms(CryptoProfile.zero(), 1.0, 100, 1.0) == 0.0


# -- real provider (optional dependency) --------------------------------------

try:
    REAL = get_provider("real")
except ProviderUnavailable:
    REAL = None

needs_real = pytest.mark.skipif(REAL is None, reason="cryptography not installed")


@needs_real
def test_real_provider_roundtrip():
    pair = REAL.keygen(None)
    sig = REAL.sign(pair.private_key, b"cam")
    assert REAL.verify(pair.public_key, b"cam", sig)
    assert not REAL.verify(pair.public_key, b"cam!", sig)


@needs_real
def test_real_group_scheme_roundtrip_and_open():
    gpk, issuing, opening = REAL.group_setup(None)
    gsk = REAL.group_join(issuing, "V042")
    gsig = REAL.group_sign(gsk, b"zeta")
    assert REAL.group_verify(gpk, b"zeta", gsig)
    assert REAL.group_open(opening, b"zeta", gsig) == "V042"
    assert not REAL.group_verify(gpk, b"zeta", gsig[:-2])
