"""In-process models of the credential infrastructure.

Four entities as plain state machines: LTCA (registration, anonymous
tickets), PCA (grid-aligned pseudonym issuance), GM (group membership and
opening), RA (resolution and revocation). Anonymity toward individual
entities is modeled by information partitioning: the LTCA alone maps
ticket -> identity, the PCA alone maps pseudonym -> ticket, the GM alone maps
group signature -> handle -> ticket, so no single entity can de-anonymize a
vehicle and every resolution transcript crosses at least two of them.

Tickets authenticate one batch request each (the per-pseudonym-ticket
alternative would only change the issuance log fan-out).
"""

import hashlib
from dataclasses import dataclass

from .credentials import (
    AnonymousTicket,
    TimeGrid,
    VpkiPseudonym,
    certified_payload,
    pseudonym_id,
    slot_sequence,
)
from .util import ceil_fraction, child_rng


class VpkiRefusal(Exception):
    pass


class DuplicateRegistration(VpkiRefusal):
    pass


class UnknownIdentity(VpkiRefusal):
    pass


class RevokedCredential(VpkiRefusal):
    pass


class BadTicket(VpkiRefusal):
    pass


class ConsumedTicket(VpkiRefusal):
    """Ticket reuse at the GM: the Sybil-prevention refusal."""


class EvidenceNotFound(VpkiRefusal):
    pass


class RevocationList:
    """Monotone set of revoked identities and pseudonym ids."""

    def __init__(self):
        self.version = 0
        self.identities = set()
        self.pseudonym_ids = set()

    def add(self, identity: str, pseudonym_ids=()):
        before = (len(self.identities), len(self.pseudonym_ids))
        self.identities.add(identity)
        self.pseudonym_ids.update(pseudonym_ids)
        if (len(self.identities), len(self.pseudonym_ids)) != before:
            self.version += 1
        return self

    def covers_pseudonym(self, pid: str) -> bool:
        return pid in self.pseudonym_ids


class Ltca:
    """Long-term authority: registration and anonymous tickets."""

    def __init__(self, provider, rng):
        self._provider = provider
        self._rng = rng
        self._keys = provider.keygen(rng)
        self.registered = {}
        self._ticket_log = {}  # token -> identity, append-only; resolution only
        self._revoked = set()

    @property
    def public_key(self) -> bytes:
        return self._keys.public_key

    def register(self, identity: str) -> dict:
        if identity in self.registered:
            raise DuplicateRegistration(identity)
        record = {"identity": identity}
        self.registered[identity] = record
        return record

    def issue_ticket(self, identity: str) -> AnonymousTicket:
        if identity not in self.registered:
            raise UnknownIdentity(identity)
        if identity in self._revoked:
            raise RevokedCredential(identity)
        token = self._rng.randbytes(16)
        ticket = AnonymousTicket(
            token=token,
            ltca_signature=self._provider.sign(self._keys.private_key, b"ticket|" + token),
        )
        self._ticket_log[token] = identity
        return ticket

    def verify_ticket(self, ticket: AnonymousTicket) -> bool:
        return self._provider.verify(
            self.public_key, b"ticket|" + ticket.token, ticket.ltca_signature
        )

    def ticket_to_identity(self, token: bytes) -> str:
        """Resolution-path lookup; called via the RA only."""
        if token not in self._ticket_log:
            raise EvidenceNotFound("unknown ticket")
        return self._ticket_log[token]

    def tickets_of(self, identity: str):
        return [tok for tok, ident in self._ticket_log.items() if ident == identity]

    def mark_revoked(self, identity: str):
        self._revoked.add(identity)

    def is_revoked(self, identity: str) -> bool:
        return identity in self._revoked


def verify_ticket_signature(provider, ltca_public_key: bytes, ticket: AnonymousTicket) -> bool:
    return provider.verify(ltca_public_key, b"ticket|" + ticket.token, ticket.ltca_signature)


class Pca:
    """Pseudonym authority; every credential it signs sits on the region grid."""

    name = "PCA"

    def __init__(self, provider, rng, grid: TimeGrid, ltca_public_key: bytes):
        self._provider = provider
        self._rng = rng
        self.grid = grid
        self._ltca_public_key = ltca_public_key
        self._keys = provider.keygen(rng)
        self._issuance_log = {}  # pseudonym id -> ticket token, append-only
        self._revoked_tickets = set()

    @property
    def public_key(self) -> bytes:
        return self._keys.public_key

    def issue_pseudonyms(self, ticket, from_t_ms, count, public_keys=None):
        """`count` consecutive aligned pseudonyms from the slot containing from_t.

        public_keys: vehicle-generated verification keys, one per slot; minted
        locally when omitted (keys then stay with the PCA, so omit only in
        alignment tests).
        """
        if count < 1:
            raise ValueError("count must be >= 1")
        if not verify_ticket_signature(self._provider, self._ltca_public_key, ticket):
            raise BadTicket("ticket signature invalid")
        if ticket.token in self._revoked_tickets:
            raise RevokedCredential("ticket lineage revoked")
        if public_keys is None:
            public_keys = [self._provider.keygen(self._rng).public_key for _ in range(count)]
        if len(public_keys) != count:
            raise ValueError("need one public key per requested pseudonym")
        out = []
        for pub, (t_s, t_e) in zip(public_keys, slot_sequence(self.grid, from_t_ms, count)):
            pid = pseudonym_id(pub, t_s)
            sig = self._provider.sign(self._keys.private_key, certified_payload(pub, t_s, t_e))
            out.append(
                VpkiPseudonym(
                    id=pid, public_key=pub, t_s_ms=t_s, t_e_ms=t_e,
                    issuer=self.name, issuer_signature=sig,
                )
            )
            self._issuance_log[pid] = ticket.token
        return out

    def pseudonym_to_ticket(self, pid: str) -> bytes:
        """Resolution-path lookup; called via the RA only."""
        if pid not in self._issuance_log:
            raise EvidenceNotFound("unknown pseudonym id")
        return self._issuance_log[pid]

    def pseudonyms_of_ticket(self, token: bytes):
        return [pid for pid, tok in self._issuance_log.items() if tok == token]

    def blacklist_ticket(self, token: bytes):
        self._revoked_tickets.add(token)


class Gm:
    """Group manager: enrolls ticket holders, opens group signatures."""

    def __init__(self, provider, rng, ltca_public_key: bytes):
        self._provider = provider
        self._ltca_public_key = ltca_public_key
        gpk, issuing, opening = provider.group_setup(rng)
        self.group_public_key = gpk
        self._issuing_key = issuing
        self._opening_key = opening
        self._consumed = set()
        self._members = {}  # handle -> ticket token
        self._revoked_tickets = set()

    @staticmethod
    def _handle(token: bytes) -> str:
        return hashlib.blake2b(token, digest_size=8).hexdigest()

    def register(self, ticket: AnonymousTicket):
        """Consume an unseen ticket, enroll its holder, return the gsk."""
        if not verify_ticket_signature(self._provider, self._ltca_public_key, ticket):
            raise BadTicket("ticket signature invalid")
        if ticket.token in self._revoked_tickets:
            raise RevokedCredential("ticket lineage revoked")
        if ticket.token in self._consumed:
            raise ConsumedTicket("ticket already used for group registration")
        self._consumed.add(ticket.token)
        handle = self._handle(ticket.token)
        self._members[handle] = ticket.token
        return self._provider.group_join(self._issuing_key, handle)

    def open(self, message: bytes, gsig: bytes) -> str:
        """Resolution-path opening; called via the RA only."""
        handle = self._provider.group_open(self._opening_key, message, gsig)
        if handle not in self._members:
            raise EvidenceNotFound("opened handle is not a registered member")
        return handle

    def handle_to_ticket(self, handle: str) -> bytes:
        if handle not in self._members:
            raise EvidenceNotFound("unknown member handle")
        return self._members[handle]

    def blacklist_ticket(self, token: bytes):
        self._revoked_tickets.add(token)


class Ra:
    """Resolution authority: orchestrates de-anonymization and revocation."""

    def __init__(self, ltca: Ltca, pca: Pca, gm: Gm):
        self._ltca = ltca
        self._pca = pca
        self._gm = gm
        self.revocation_list = RevocationList()
        self.misbehavior_reports = []

    def submit_report(self, report: dict):
        """Misbehavior evidence handed over by a vehicle once it has
        connectivity; kept as (evidence, timestamp) records."""
        self.misbehavior_reports.append(report)

    def resolve(self, evidence):
        """Identity behind a pseudonym id or a (message, group signature) pair.

        Returns (identity, transcript); the transcript names every entity the
        chain crossed and, by construction, always holds >= 2 entities beyond
        the RA itself.
        """
        transcript = ["RA"]
        if isinstance(evidence, str):
            token = self._pca.pseudonym_to_ticket(evidence)
            transcript.append("PCA")
            identity = self._ltca.ticket_to_identity(token)
            transcript.append("LTCA")
        elif isinstance(evidence, tuple) and len(evidence) == 2:
            message, gsig = evidence
            handle = self._gm.open(message, gsig)
            token = self._gm.handle_to_ticket(handle)
            transcript.append("GM")
            identity = self._ltca.ticket_to_identity(token)
            transcript.append("LTCA")
        else:
            raise EvidenceNotFound(f"unsupported evidence {type(evidence).__name__}")
        return identity, transcript

    def revoke(self, identity: str) -> RevocationList:
        """Evict an identity: CRL entry, ticket blacklists, issuance refusals."""
        if identity not in self._ltca.registered:
            raise UnknownIdentity(identity)
        pids = []
        for token in self._ltca.tickets_of(identity):
            pids.extend(self._pca.pseudonyms_of_ticket(token))
            self._pca.blacklist_ticket(token)
            self._gm.blacklist_ticket(token)
        self._ltca.mark_revoked(identity)
        return self.revocation_list.add(identity, pids)


@dataclass(frozen=True)
class ReachabilityModel:
    """Deterministic per-vehicle, per-time VPKI availability.

    Modes: "always_on"; "disconnected_fraction" (exactly ceil(p*population)
    seed-chosen vehicles are unreachable during the outage window);
    "coverage_windows" (reachable for everyone only inside the windows).
    """

    mode: str = "always_on"
    p: float = 0.0
    population: int = 0
    seed: int = 0
    outage_ms: tuple | None = None
    windows_ms: tuple = ()
    unreachable: frozenset = frozenset()

    @classmethod
    def always_on(cls):
        return cls(mode="always_on")

    @classmethod
    def disconnected_fraction(cls, p, population, seed, outage_ms=None):
        count = ceil_fraction(p, population)
        rng = child_rng(seed, "reachability")
        chosen = frozenset(rng.sample(range(population), count)) if count else frozenset()
        return cls(
            mode="disconnected_fraction", p=p, population=population, seed=seed,
            outage_ms=tuple(outage_ms) if outage_ms else None, unreachable=chosen,
        )

    @classmethod
    def coverage_windows(cls, windows_ms):
        return cls(mode="coverage_windows", windows_ms=tuple(tuple(w) for w in windows_ms))

    def is_reachable(self, vehicle: int, t_ms: int) -> bool:
        if self.mode == "always_on":
            return True
        if self.mode == "disconnected_fraction":
            if vehicle not in self.unreachable:
                return True
            if self.outage_ms is None:
                return False
            start, end = self.outage_ms
            return not (start <= t_ms < end)
        if self.mode == "coverage_windows":
            return any(start <= t_ms < end for start, end in self.windows_ms)
        raise ValueError(f"unknown reachability mode {self.mode!r}")

    @classmethod
    def from_dict(cls, data: dict, population: int, seed: int):
        mode = data.get("mode", "always_on")
        if mode == "always_on":
            return cls.always_on()
        if mode == "disconnected_fraction":
            outage = data.get("outage_ms")
            return cls.disconnected_fraction(data["p"], population, seed, outage)
        if mode == "coverage_windows":
            return cls.coverage_windows(data.get("windows_ms", ()))
        raise ValueError(f"unknown reachability mode {mode!r}")


class Infrastructure:
    """The entity ensemble wired together over one provider and grid."""

    def __init__(self, provider, grid: TimeGrid, seed: int):
        self.provider = provider
        self.grid = grid
        self.ltca = Ltca(provider, child_rng(seed, "ltca"))
        self.pca = Pca(provider, child_rng(seed, "pca"), grid, self.ltca.public_key)
        self.gm = Gm(provider, child_rng(seed, "gm"), self.ltca.public_key)
        self.ra = Ra(self.ltca, self.pca, self.gm)

    @property
    def revocation_list(self) -> RevocationList:
        return self.ra.revocation_list
