"""Device identity: registration, claim matching, blacklist, lifecycle.

Claim secrets are stored only as salted SHA-256 hashes (salt = the
device id, so equal secrets on different devices hash differently).
Claiming compares hashes in constant time. The lifecycle is a small
state machine:

    Unprovisioned -> Claimed          (claim with matching secret)
    Claimed       -> Deprovisioned    (deprovision; owner cleared)
    Claimed       -> Blacklisted
    Unprovisioned -> Blacklisted
    Deprovisioned -> Unprovisioned    (re-register with a NEW secret)

Blacklisting is terminal: there is no unblacklist operation, and a
blacklisted id cannot be re-registered. Rendezvous sessions model the
device-initiated proxy connection as an opaque unique address.
"""

from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import FleetsecError
from .keystore import Keystore, PublicKeyInfo
from .wire import b64d, b64e

_FILE_FORMAT = "fleetsec-registry-v1"


class DuplicateDeviceError(FleetsecError):
    pass


class UnknownDeviceError(FleetsecError):
    pass


class BlacklistedError(FleetsecError):
    pass


class SecretMismatchError(FleetsecError):
    pass


class AlreadyClaimedError(FleetsecError):
    pass


class NotClaimedError(FleetsecError):
    pass


class NotClaimableError(FleetsecError):
    """Claim attempted against a deprovisioned record; re-register first."""


class InvalidSessionError(FleetsecError):
    pass


class LifecycleError(FleetsecError):
    """Operation not allowed from the record's current status."""


class Status(str, Enum):
    UNPROVISIONED = "Unprovisioned"
    CLAIMED = "Claimed"
    BLACKLISTED = "Blacklisted"
    DEPROVISIONED = "Deprovisioned"


class Channel(str, Enum):
    PRE_PROVISIONED = "PreProvisioned"
    DEVICE_ENTERED_SECRET = "DeviceEnteredSecret"
    DEVICE_DISPLAYED_KEY = "DeviceDisplayedKey"
    COMPANION_DEVICE = "CompanionDevice"


def claim_hash(device_id: str, secret: bytes) -> bytes:
    return hashlib.sha256(device_id.encode("utf-8") + b"\x1f" + secret).digest()


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    claim_hash: bytes
    owner: str | None
    device_pub: PublicKeyInfo | None
    status: Status
    needs_reprovision: bool

    def __post_init__(self):
        if len(self.claim_hash) != 32:
            raise ValueError("claim_hash must be 32 bytes")
        if self.status is Status.CLAIMED and self.owner is None:
            raise ValueError("claimed record must have an owner")
        # blacklisted records keep their last owner for audit
        if self.status in (Status.UNPROVISIONED, Status.DEPROVISIONED) and self.owner is not None:
            raise ValueError(f"{self.status.value} record cannot have an owner")


@dataclass(frozen=True)
class ClaimRequest:
    user: str
    device_id: str
    secret: bytes
    channel: Channel = Channel.PRE_PROVISIONED

    def __post_init__(self):
        if not self.secret:
            raise ValueError("claim secret must be non-empty")


@dataclass(frozen=True)
class RendezvousSession:
    session_id: str
    device_id: str
    established_at: int
    encrypted: bool = True


class DeviceRegistry:
    """Shared registry service: records, sessions, per-device keypairs.

    Device keypairs live in an internal seeded keystore under ids of the
    form device:<id>:g<generation>; the generation counter bumps on every
    re-registration so a re-provisioned device never reuses key material.
    """

    def __init__(self, seed: int = 0):
        self._seed = int(seed)
        self._keystore = Keystore(seed)
        self._records: dict[str, DeviceRecord] = {}
        self._sessions: dict[str, RendezvousSession] = {}
        self._next_session = 1
        self._generation: dict[str, int] = {}

    def record(self, device_id: str) -> DeviceRecord:
        try:
            return self._records[device_id]
        except KeyError:
            raise UnknownDeviceError(f"unknown device {device_id!r}") from None

    def device_ids(self) -> list[str]:
        return sorted(self._records)

    def register_device(self, device_id: str, claim_secret: bytes) -> DeviceRecord:
        if not device_id:
            raise ValueError("device_id must be non-empty")
        if not claim_secret:
            raise ValueError("claim secret must be non-empty")
        existing = self._records.get(device_id)
        if existing is not None and existing.status is not Status.DEPROVISIONED:
            raise DuplicateDeviceError(f"device {device_id!r} already registered")
        self._generation[device_id] = self._generation.get(device_id, 0) + 1
        rec = DeviceRecord(
            device_id=device_id,
            claim_hash=claim_hash(device_id, claim_secret),
            owner=None,
            device_pub=None,
            status=Status.UNPROVISIONED,
            needs_reprovision=False,
        )
        self._records[device_id] = rec
        return rec

    def device_connect(self, device_id: str, clock: int) -> RendezvousSession:
        rec = self.record(device_id)
        if rec.status is Status.BLACKLISTED:
            raise BlacklistedError(f"device {device_id!r} is blacklisted")
        session = RendezvousSession(
            session_id=f"rv-{self._next_session:06d}",
            device_id=device_id,
            established_at=clock,
        )
        self._next_session += 1
        self._sessions[session.session_id] = session
        return session

    def claim(self, session: RendezvousSession, request: ClaimRequest) -> DeviceRecord:
        """Link device to user when the secret matches.

        The secret is checked before the claim-state gate so a guesser
        learns nothing about provisioning state from the error, and every
        wrong guess surfaces as SecretMismatch regardless of target.
        """
        stored = self._sessions.get(session.session_id)
        if stored is None or stored != session:
            raise InvalidSessionError("session is not open in this registry")
        if request.device_id != session.device_id:
            raise InvalidSessionError("claim request names a different device")
        rec = self.record(request.device_id)
        if rec.status is Status.BLACKLISTED:
            raise BlacklistedError(f"device {request.device_id!r} is blacklisted")
        offered = claim_hash(request.device_id, request.secret)
        if not hmac.compare_digest(offered, rec.claim_hash):
            raise SecretMismatchError("claim secret does not match")
        if rec.status is Status.CLAIMED:
            raise AlreadyClaimedError(f"device {request.device_id!r} already has an owner")
        if rec.status is Status.DEPROVISIONED:
            raise NotClaimableError(
                f"device {request.device_id!r} is deprovisioned; re-register it first"
            )
        key_id = f"device:{request.device_id}:g{self._generation[request.device_id]}"
        device_pub = self._keystore.generate_key(key_id)
        rec = replace(
            rec,
            status=Status.CLAIMED,
            owner=request.user,
            device_pub=device_pub,
            needs_reprovision=False,
        )
        self._records[request.device_id] = rec
        return rec

    def blacklist(self, device_id: str) -> DeviceRecord:
        rec = self.record(device_id)
        if rec.status is Status.DEPROVISIONED:
            raise LifecycleError(
                f"device {device_id!r} is deprovisioned; re-register before blacklisting"
            )
        rec = replace(rec, status=Status.BLACKLISTED)
        self._records[device_id] = rec
        self._sessions = {
            sid: s for sid, s in self._sessions.items() if s.device_id != device_id
        }
        return rec

    def deprovision(self, device_id: str) -> DeviceRecord:
        rec = self.record(device_id)
        if rec.status is not Status.CLAIMED:
            raise NotClaimedError(f"device {device_id!r} is {rec.status.value}")
        rec = replace(
            rec, status=Status.DEPROVISIONED, owner=None, device_pub=None,
            needs_reprovision=True,
        )
        self._records[device_id] = rec
        return rec

    def mark_needs_reprovision(self, device_id: str) -> DeviceRecord:
        """Factory recovery wipes identity; flag the record for re-enrollment."""
        rec = replace(self.record(device_id), needs_reprovision=True)
        self._records[device_id] = rec
        return rec

    def detect_credential_clone(
        self, observations: Iterable[tuple[str, str, int]]
    ) -> list[str]:
        """Device ids seen from two source tags in overlapping time windows.

        Each (device, source) pair's observations collapse to a closed
        interval [first, last]; two sources overlapping flags theft, while
        disjoint intervals look like a legitimately re-homed device.
        """
        windows: dict[str, dict[str, list[int]]] = {}
        for device_id, source, time in observations:
            per_source = windows.setdefault(device_id, {})
            span = per_source.get(source)
            if span is None:
                per_source[source] = [time, time]
            else:
                span[0] = min(span[0], time)
                span[1] = max(span[1], time)
        flagged = []
        for device_id, per_source in windows.items():
            spans = sorted(per_source.values())
            if any(spans[i + 1][0] <= spans[i][1] for i in range(len(spans) - 1)):
                flagged.append(device_id)
        return sorted(flagged)

    def to_json_obj(self) -> dict:
        """Snapshot without secrets: claim hashes only, never the secrets.

        The keystore seed is included so device keys (hash-derived from
        seed + key id) survive a reload; a production registry would keep
        that in an HSM rather than a JSON file.
        """
        devices = []
        for device_id in sorted(self._records):
            rec = self._records[device_id]
            devices.append(
                {
                    "device_id": rec.device_id,
                    "claim_hash": b64e(rec.claim_hash),
                    "owner": rec.owner,
                    "device_pub": None if rec.device_pub is None else rec.device_pub.to_json_obj(),
                    "status": rec.status.value,
                    "needs_reprovision": rec.needs_reprovision,
                    "generation": self._generation.get(device_id, 1),
                }
            )
        return {
            "format": _FILE_FORMAT,
            "seed": self._seed,
            "next_session": self._next_session,
            "devices": devices,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_json_obj(cls, obj: dict) -> DeviceRegistry:
        if not isinstance(obj, dict) or obj.get("format") != _FILE_FORMAT:
            raise ValueError("missing or unsupported registry format tag")
        registry = cls(obj["seed"])
        registry._next_session = obj["next_session"]
        for entry in obj["devices"]:
            rec = DeviceRecord(
                device_id=entry["device_id"],
                claim_hash=b64d(entry["claim_hash"]),
                owner=entry["owner"],
                device_pub=None
                if entry["device_pub"] is None
                else PublicKeyInfo.from_json_obj(entry["device_pub"]),
                status=Status(entry["status"]),
                needs_reprovision=entry["needs_reprovision"],
            )
            registry._records[rec.device_id] = rec
            registry._generation[rec.device_id] = entry["generation"]
            if rec.device_pub is not None:
                # keys are seed-derived, so regenerating reproduces them;
                # mismatch means the snapshot was edited or the seed lies
                regenerated = registry._keystore.generate_key(rec.device_pub.key_id)
                if regenerated.public_bytes != rec.device_pub.public_bytes:
                    raise ValueError(
                        f"device key for {rec.device_id!r} does not match registry seed"
                    )
        return registry

    @classmethod
    def load(cls, path: str | Path) -> DeviceRegistry:
        return cls.from_json_obj(json.loads(Path(path).read_text(encoding="utf-8")))
