"""Pseudonym credentials and the region-wide lifetime grid.

Every pseudonym lifetime sits on a shared grid (period gamma, slot length
tau_P, common origin) so that at any instant all transmitting vehicles show
the same (t_s, t_e) pair. Intervals are half-open [t_s, t_e) in integer
milliseconds of virtual time; the half-open convention is what makes the
"at most one valid key" rule decidable at slot boundaries.
"""

import hashlib
from dataclasses import dataclass, field

FLAVOR_VPKI = "vpki"
FLAVOR_SELF = "selfcert"
FLAVOR_SILENT = "silent"


class GridDomainError(ValueError):
    """Timestamp outside the grid's domain (before its origin)."""


class GridInconsistencyError(ValueError):
    """Observed interval cannot lie on any grid with the given slot length."""


class GridUnknownError(RuntimeError):
    """Vehicle has no local history and no neighbor observation to align to."""


@dataclass(frozen=True)
class TimeGrid:
    """Region-wide alignment grid: slot length tau_p, period gamma, anchor origin."""

    gamma_ms: int
    tau_p_ms: int
    origin_ms: int = 0

    def __post_init__(self):
        if self.tau_p_ms <= 0 or self.gamma_ms <= 0:
            raise ValueError("gamma and tau_p must be positive")
        if self.gamma_ms % self.tau_p_ms != 0:
            raise ValueError("gamma must be an integer multiple of tau_p")

    @classmethod
    def from_seconds(cls, gamma_s, tau_p_s, origin_s=0.0):
        return cls(round(gamma_s * 1000), round(tau_p_s * 1000), round(origin_s * 1000))

    @property
    def slots_per_gamma(self) -> int:
        return self.gamma_ms // self.tau_p_ms


def slot_bounds(grid: TimeGrid, t_ms: int) -> tuple[int, int]:
    """Aligned pseudonym slot [t_s, t_e) containing t."""
    if t_ms < grid.origin_ms:
        raise GridDomainError(f"t={t_ms} precedes grid origin {grid.origin_ms}")
    k = (t_ms - grid.origin_ms) // grid.tau_p_ms
    t_s = grid.origin_ms + k * grid.tau_p_ms
    return t_s, t_s + grid.tau_p_ms


def gamma_bounds(grid: TimeGrid, t_ms: int) -> tuple[int, int]:
    """Enclosing gamma window [start, end); reverts are scheduled at `end`."""
    if t_ms < grid.origin_ms:
        raise GridDomainError(f"t={t_ms} precedes grid origin {grid.origin_ms}")
    k = (t_ms - grid.origin_ms) // grid.gamma_ms
    start = grid.origin_ms + k * grid.gamma_ms
    return start, start + grid.gamma_ms


def slot_sequence(grid: TimeGrid, from_t_ms: int, count: int) -> list[tuple[int, int]]:
    """`count` consecutive slots starting at the slot containing from_t."""
    if count < 1:
        raise ValueError("count must be >= 1")
    t_s, t_e = slot_bounds(grid, from_t_ms)
    step = grid.tau_p_ms
    return [(t_s + i * step, t_e + i * step) for i in range(count)]


def infer_grid_from_neighbor(observed: tuple[int, int], tau_p_ms: int) -> int:
    """Grid origin offset (mod tau_p) reconstructed from a neighbor's pseudonym.

    Returns the offset such that observed t_s lies on a grid anchored at it.
    Feeding back a slot from the reconstructed grid yields the same offset.
    """
    t_s, t_e = observed
    if t_e - t_s != tau_p_ms:
        raise GridInconsistencyError(
            f"observed lifetime {t_e - t_s} != tau_p {tau_p_ms}"
        )
    return t_s % tau_p_ms


def pseudonym_id(public_key: bytes, t_s_ms: int) -> str:
    """Opaque credential id: digest of the public key and slot start."""
    h = hashlib.blake2b(digest_size=16)
    h.update(public_key)
    h.update(t_s_ms.to_bytes(8, "big", signed=True))
    return h.hexdigest()


@dataclass(frozen=True)
class VpkiPseudonym:
    """Short-term credential issued and signed by the PCA."""

    id: str
    public_key: bytes
    t_s_ms: int
    t_e_ms: int
    issuer: str
    issuer_signature: bytes

    @property
    def flavor(self) -> str:
        return FLAVOR_VPKI

    def valid_at(self, t_ms: int) -> bool:
        return self.t_s_ms <= t_ms < self.t_e_ms


@dataclass(frozen=True)
class SelfCertifiedPseudonym:
    """On-the-fly credential: the tuple (public key, t_s, t_e) carries a group
    signature instead of an issuer signature."""

    id: str
    public_key: bytes
    t_s_ms: int
    t_e_ms: int
    group_signature: bytes

    @property
    def flavor(self) -> str:
        return FLAVOR_SELF

    def valid_at(self, t_ms: int) -> bool:
        return self.t_s_ms <= t_ms < self.t_e_ms


@dataclass(frozen=True)
class AnonymousTicket:
    """Single-use registration token; maps to an identity only inside the LTCA."""

    token: bytes
    ltca_signature: bytes


def certified_payload(public_key: bytes, t_s_ms: int, t_e_ms: int) -> bytes:
    """Byte string certified by the issuer (PCA) or the group signature."""
    return b"pseudonym|%d|%d|" % (t_s_ms, t_e_ms) + public_key


@dataclass
class PseudonymPool:
    """Per-vehicle credential store, one ordered track per flavor.

    Within a flavor, intervals never overlap: at most one credential of each
    flavor is valid at any instant.
    """

    vpki: list = field(default_factory=list)
    selfcert: list = field(default_factory=list)

    def add_vpki(self, p: VpkiPseudonym):
        self._insert(self.vpki, p)

    def add_selfcert(self, p: SelfCertifiedPseudonym):
        self._insert(self.selfcert, p)

    @staticmethod
    def _insert(track: list, p):
        if p.t_e_ms <= p.t_s_ms:
            raise ValueError("empty or inverted validity interval")
        for other in track:
            if p.t_s_ms < other.t_e_ms and other.t_s_ms < p.t_e_ms:
                raise ValueError(
                    f"overlapping credentials: [{p.t_s_ms},{p.t_e_ms}) vs "
                    f"[{other.t_s_ms},{other.t_e_ms})"
                )
        track.append(p)
        track.sort(key=lambda q: q.t_s_ms)

    def current(self, t_ms: int, prefer: str | None = None):
        """(flavor, pseudonym) valid at t, preferring the caller's mode. None if neither."""
        order = [FLAVOR_VPKI, FLAVOR_SELF]
        if prefer == FLAVOR_SELF:
            order.reverse()
        for flavor in order:
            track = self.vpki if flavor == FLAVOR_VPKI else self.selfcert
            for p in track:
                if p.valid_at(t_ms):
                    return flavor, p
        return None

    def current_vpki(self, t_ms: int):
        for p in self.vpki:
            if p.valid_at(t_ms):
                return p
        return None

    def current_selfcert(self, t_ms: int):
        for p in self.selfcert:
            if p.valid_at(t_ms):
                return p
        return None

    def is_exhausted(self, t_ms: int, horizon_ms: int) -> bool:
        """True iff some instant of [t, t+horizon) lacks VPKI coverage.

        horizon=0 degenerates to a point check at t.
        """
        if horizon_ms < 0:
            raise ValueError("horizon must be >= 0")
        if horizon_ms == 0:
            return self.current_vpki(t_ms) is None
        cursor = t_ms
        end = t_ms + horizon_ms
        for p in self.vpki:  # sorted by t_s
            if p.t_e_ms <= cursor:
                continue
            if p.t_s_ms > cursor:
                return True
            cursor = p.t_e_ms
            if cursor >= end:
                return False
        return cursor < end

    def drop_expired(self, t_ms: int):
        """Discard credentials whose interval ended at or before t."""
        self.vpki = [p for p in self.vpki if p.t_e_ms > t_ms]
        self.selfcert = [p for p in self.selfcert if p.t_e_ms > t_ms]

    def last_vpki_end(self):
        return self.vpki[-1].t_e_ms if self.vpki else None
