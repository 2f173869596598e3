"""Firmware manifests and the on-device A/B update state machine.

A manifest binds (firmware_id, version, digest, expiry) to a timestamp
token over the digest, all under a publisher signature. Devices verify
with a fixed check order so rejection reasons are deterministic, write
only the inactive slot, and fall back to the last verified slot when a
boot finds the active one unverified. A device with no bootable slot
parks in a fail state until factory recovery.

Rollback protection is a conjunction: the candidate must carry both a
higher version and a later token gen_time than the active slot. Version
alone breaks if a publisher key is misused to renumber old firmware; a
timestamp alone breaks under TSA clock reuse.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .errors import FleetsecError
from .keystore import KeyHandle, PublicKeyInfo, verify
from .tsa import (
    MismatchedImprintError,
    TimestampAuthority,
    TimestampToken,
    UntrustedSignerError,
    decode_token,
    verify_token,
)
from .wire import Reader, b64d, b64e, lp, u64

DIGEST_LEN = 32


class ExpiryInPastError(FleetsecError):
    pass


class NotInFailStateError(FleetsecError):
    pass


class RecoveryRefusedError(FleetsecError):
    """Factory recovery failed verification; carries the same reasons as Verdict."""

    def __init__(self, reason: RejectReason):
        super().__init__(f"recovery refused: {reason.value}")
        self.reason = reason


class RejectReason(str, Enum):
    BAD_PUBLISHER_SIG = "BadPublisherSig"
    UNTRUSTED_TIMESTAMP = "UntrustedTimestamp"
    DIGEST_MISMATCH = "DigestMismatch"
    ROLLBACK = "Rollback"
    EXPIRED = "Expired"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: RejectReason | None = None

    def __post_init__(self):
        if self.accepted and self.reason is not None:
            raise ValueError("accepted verdict cannot carry a reason")
        if not self.accepted and self.reason is None:
            raise ValueError("rejected verdict needs a reason")

    def __str__(self) -> str:
        if self.accepted:
            return "Accept"
        return f"Reject({self.reason.value})"

    @classmethod
    def accept(cls) -> Verdict:
        return cls(True)

    @classmethod
    def reject(cls, reason: RejectReason) -> Verdict:
        return cls(False, reason)


def manifest_signed_body(
    firmware_id: str, version: int, digest: bytes, expiry: int, token: TimestampToken
) -> bytes:
    return (
        lp(firmware_id.encode("utf-8"))
        + u64(version)
        + lp(digest)
        + u64(expiry)
        + lp(token.encode())
    )


@dataclass(frozen=True)
class FirmwareManifest:
    """Signed update authorization.

    Honest publishers produce token.imprint = digest and expiry >
    token.gen_time (build_manifest guarantees both). The type itself does
    not reject other combinations: verification has to be able to examine
    adversarial manifests and name what is wrong with them.
    """

    firmware_id: str
    version: int
    digest: bytes
    expiry: int
    token: TimestampToken
    publisher_sig: bytes

    def __post_init__(self):
        if self.version < 0:
            raise ValueError("version must be non-negative")
        if len(self.digest) != DIGEST_LEN:
            raise ValueError(f"digest must be {DIGEST_LEN} bytes")

    def signed_body(self) -> bytes:
        return manifest_signed_body(
            self.firmware_id, self.version, self.digest, self.expiry, self.token
        )

    def encode(self) -> bytes:
        return self.signed_body() + lp(self.publisher_sig)

    def to_json_obj(self, debug: dict | None = None) -> dict:
        obj = {
            "firmware_id": self.firmware_id,
            "version": self.version,
            "digest": b64e(self.digest),
            "expiry": self.expiry,
            "token": b64e(self.token.encode()),
            "publisher_sig": b64e(self.publisher_sig),
        }
        if debug is not None:
            obj["debug"] = debug
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> FirmwareManifest:
        return cls(
            firmware_id=obj["firmware_id"],
            version=obj["version"],
            digest=b64d(obj["digest"]),
            expiry=obj["expiry"],
            token=decode_token(b64d(obj["token"])),
            publisher_sig=b64d(obj["publisher_sig"]),
        )


def decode_manifest(data: bytes) -> FirmwareManifest:
    reader = Reader(data)
    firmware_id = reader.lp().decode("utf-8", errors="replace")
    version = reader.u64()
    digest = reader.lp()
    expiry = reader.u64()
    token = decode_token(reader.lp())
    publisher_sig = reader.lp()
    reader.expect_end()
    return FirmwareManifest(firmware_id, version, digest, expiry, token, publisher_sig)


def build_manifest(
    firmware: bytes,
    firmware_id: str,
    version: int,
    expiry: int,
    publisher_key: KeyHandle,
    tsa: TimestampAuthority,
    now: int,
) -> FirmwareManifest:
    if expiry <= now:
        raise ExpiryInPastError(f"expiry {expiry} is not after now {now}")
    digest = hashlib.sha256(firmware).digest()
    token = tsa.issue_token(digest, now)
    body = manifest_signed_body(firmware_id, version, digest, expiry, token)
    return FirmwareManifest(
        firmware_id, version, digest, expiry, token, publisher_key.sign(body)
    )


class Slot(str, Enum):
    A = "A"
    B = "B"

    def other(self) -> Slot:
        return Slot.B if self is Slot.A else Slot.A


class DeviceMode(str, Enum):
    RUNNING = "Running"
    UPDATING = "Updating"
    FAIL_STATE = "FailState"


@dataclass(frozen=True)
class SlotState:
    image_digest: bytes
    version: int
    gen_time: int
    verified: bool

    def __post_init__(self):
        if len(self.image_digest) != DIGEST_LEN:
            raise ValueError(f"image_digest must be {DIGEST_LEN} bytes")

    def to_json_obj(self) -> dict:
        return {
            "image_digest": b64e(self.image_digest),
            "version": self.version,
            "gen_time": self.gen_time,
            "verified": self.verified,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> SlotState:
        return cls(
            b64d(obj["image_digest"]), obj["version"], obj["gen_time"], obj["verified"]
        )


# version/gen_time -1 lose every freshness comparison against real manifests
EMPTY_SLOT = SlotState(image_digest=b"\x00" * DIGEST_LEN, version=-1, gen_time=-1, verified=False)


@dataclass(frozen=True)
class DeviceUpdateState:
    active_slot: Slot
    slot_a: SlotState
    slot_b: SlotState
    trust_anchor_tsa: PublicKeyInfo
    trust_anchor_publisher: PublicKeyInfo
    mode: DeviceMode

    def slot(self, which: Slot) -> SlotState:
        return self.slot_a if which is Slot.A else self.slot_b

    def active(self) -> SlotState:
        return self.slot(self.active_slot)

    def inactive(self) -> SlotState:
        return self.slot(self.active_slot.other())

    def _with_slot(self, which: Slot, value: SlotState, **changes) -> DeviceUpdateState:
        field = "slot_a" if which is Slot.A else "slot_b"
        return replace(self, **{field: value}, **changes)

    def to_json_obj(self) -> dict:
        return {
            "active_slot": self.active_slot.value,
            "slots": {"A": self.slot_a.to_json_obj(), "B": self.slot_b.to_json_obj()},
            "trust_anchor_tsa": self.trust_anchor_tsa.to_json_obj(),
            "trust_anchor_publisher": self.trust_anchor_publisher.to_json_obj(),
            "mode": self.mode.value,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> DeviceUpdateState:
        return cls(
            active_slot=Slot(obj["active_slot"]),
            slot_a=SlotState.from_json_obj(obj["slots"]["A"]),
            slot_b=SlotState.from_json_obj(obj["slots"]["B"]),
            trust_anchor_tsa=PublicKeyInfo.from_json_obj(obj["trust_anchor_tsa"]),
            trust_anchor_publisher=PublicKeyInfo.from_json_obj(
                obj["trust_anchor_publisher"]
            ),
            mode=DeviceMode(obj["mode"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> DeviceUpdateState:
        return cls.from_json_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def initial_state(
    image_digest: bytes,
    version: int,
    trust_anchor_tsa: PublicKeyInfo,
    trust_anchor_publisher: PublicKeyInfo,
    gen_time: int = 0,
) -> DeviceUpdateState:
    """Factory-fresh device: verified image in slot A, slot B empty."""
    return DeviceUpdateState(
        active_slot=Slot.A,
        slot_a=SlotState(image_digest, version, gen_time, verified=True),
        slot_b=EMPTY_SLOT,
        trust_anchor_tsa=trust_anchor_tsa,
        trust_anchor_publisher=trust_anchor_publisher,
        mode=DeviceMode.RUNNING,
    )


@dataclass(frozen=True)
class RejectionRecord:
    time: int
    firmware_id: str
    version: int
    reason: str


def device_verify(
    state: DeviceUpdateState, manifest: FirmwareManifest, firmware: bytes, now: int
) -> Verdict:
    """Pure verification; first failing check names the reason.

    Order: publisher signature, timestamp token, image digest, freshness
    (version AND gen_time both strictly newer than the active slot),
    expiry. Authenticity before freshness keeps reasons deterministic and
    stops an attacker from probing version state with unsigned junk.
    """
    if not verify(state.trust_anchor_publisher, manifest.signed_body(), manifest.publisher_sig):
        return Verdict.reject(RejectReason.BAD_PUBLISHER_SIG)
    try:
        verify_token(manifest.token, manifest.digest, state.trust_anchor_tsa)
    except (UntrustedSignerError, MismatchedImprintError):
        return Verdict.reject(RejectReason.UNTRUSTED_TIMESTAMP)
    if hashlib.sha256(firmware).digest() != manifest.digest:
        return Verdict.reject(RejectReason.DIGEST_MISMATCH)
    active = state.active()
    if not (manifest.version > active.version and manifest.token.gen_time > active.gen_time):
        return Verdict.reject(RejectReason.ROLLBACK)
    if not now < manifest.expiry:
        return Verdict.reject(RejectReason.EXPIRED)
    return Verdict.accept()


def apply_update(
    state: DeviceUpdateState,
    manifest: FirmwareManifest,
    firmware: bytes,
    now: int,
    events: list[RejectionRecord] | None = None,
) -> DeviceUpdateState:
    """Install into the inactive slot on Accept; otherwise change nothing.

    Rejections (and refusals while in the fail state) are reported through
    the optional events list, never through the returned state.
    """
    if state.mode is DeviceMode.FAIL_STATE:
        if events is not None:
            events.append(
                RejectionRecord(now, manifest.firmware_id, manifest.version, "FailState")
            )
        return state
    verdict = device_verify(state, manifest, firmware, now)
    if not verdict.accepted:
        if events is not None:
            events.append(
                RejectionRecord(
                    now, manifest.firmware_id, manifest.version, verdict.reason.value
                )
            )
        return state
    new_slot = SlotState(
        image_digest=manifest.digest,
        version=manifest.version,
        gen_time=manifest.token.gen_time,
        verified=True,
    )
    target = state.active_slot.other()
    return state._with_slot(target, new_slot, active_slot=target, mode=DeviceMode.RUNNING)


def interrupt_update(
    state: DeviceUpdateState,
    manifest: FirmwareManifest,
    firmware: bytes,
    cut_point: float,
) -> DeviceUpdateState:
    """Model a write torn at cut_point: inactive slot holds a partial image."""
    if not 0 <= cut_point < 1:
        raise ValueError(f"cut_point must be in [0, 1), got {cut_point}")
    partial = firmware[: int(len(firmware) * cut_point)]
    torn = SlotState(
        image_digest=hashlib.sha256(partial).digest(),
        version=manifest.version,
        gen_time=manifest.token.gen_time,
        verified=False,
    )
    return state._with_slot(
        state.active_slot.other(), torn, mode=DeviceMode.UPDATING
    )


def boot(state: DeviceUpdateState) -> tuple[DeviceUpdateState, Slot | None]:
    """Boot the active slot, fall back to the other, or park in FailState."""
    if state.active().verified:
        return replace(state, mode=DeviceMode.RUNNING), state.active_slot
    fallback = state.active_slot.other()
    if state.slot(fallback).verified:
        return replace(state, active_slot=fallback, mode=DeviceMode.RUNNING), fallback
    return replace(state, mode=DeviceMode.FAIL_STATE), None


def recover_to_trusted(
    state: DeviceUpdateState,
    factory_manifest: FirmwareManifest,
    factory_firmware: bytes,
    now: int,
) -> DeviceUpdateState:
    """Factory recovery from FailState.

    Verification runs as usual minus the freshness check (a factory image
    is by definition old); signature, token, digest, and expiry are still
    enforced because recovery is itself an attack surface. Identity must
    be re-provisioned afterwards; callers flag that in the registry.
    """
    if state.mode is not DeviceMode.FAIL_STATE:
        raise NotInFailStateError(f"device mode is {state.mode.value}")
    if not verify(
        state.trust_anchor_publisher,
        factory_manifest.signed_body(),
        factory_manifest.publisher_sig,
    ):
        raise RecoveryRefusedError(RejectReason.BAD_PUBLISHER_SIG)
    try:
        verify_token(factory_manifest.token, factory_manifest.digest, state.trust_anchor_tsa)
    except (UntrustedSignerError, MismatchedImprintError):
        raise RecoveryRefusedError(RejectReason.UNTRUSTED_TIMESTAMP) from None
    if hashlib.sha256(factory_firmware).digest() != factory_manifest.digest:
        raise RecoveryRefusedError(RejectReason.DIGEST_MISMATCH)
    if not now < factory_manifest.expiry:
        raise RecoveryRefusedError(RejectReason.EXPIRED)
    recovered = SlotState(
        image_digest=factory_manifest.digest,
        version=factory_manifest.version,
        gen_time=factory_manifest.token.gen_time,
        verified=True,
    )
    return replace(
        state,
        active_slot=Slot.A,
        slot_a=recovered,
        slot_b=EMPTY_SLOT,
        mode=DeviceMode.RUNNING,
    )
