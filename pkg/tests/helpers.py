"""Builders shared across protocol tests.

A tiny two-key PKI, deterministic firmware images, an independent
re-derivation of the device verification order, and a randomized
adversarial trace runner for the update state machine.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from fleetsec.keystore import Keystore, verify
from fleetsec.tsa import (
    MismatchedImprintError,
    TimestampAuthority,
    UntrustedSignerError,
    verify_token,
)
from fleetsec.update_protocol import (
    DeviceMode,
    DeviceUpdateState,
    FirmwareManifest,
    RejectReason,
    RejectionRecord,
    apply_update,
    boot,
    build_manifest,
    initial_state,
    interrupt_update,
)
from fleetsec.wire import lp, u64


def make_pki(seed: int = 2024) -> tuple[Keystore, TimestampAuthority]:
    store = Keystore(seed)
    store.generate_key("publisher")
    store.generate_key("tsa-root")
    return store, TimestampAuthority(store, "tsa-root")


def firmware_image(version: int, size: int = 192) -> bytes:
    """Deterministic pseudo-firmware, distinct per version."""
    out = bytearray()
    counter = 0
    while len(out) < size:
        out.extend(hashlib.sha256(b"image|%d|%d" % (version, counter)).digest())
        counter += 1
    return bytes(out[:size])


def expected_reason(
    state: DeviceUpdateState, manifest: FirmwareManifest, firmware: bytes, now: int
) -> RejectReason | None:
    """First failing verification check, re-derived independently.

    Deliberately a second, dumber implementation, down to re-encoding the
    signed body from wire primitives, so the production path has
    something to disagree with.
    """
    body = (
        lp(manifest.firmware_id.encode("utf-8"))
        + u64(manifest.version)
        + lp(manifest.digest)
        + u64(manifest.expiry)
        + lp(manifest.token.encode())
    )
    if not verify(state.trust_anchor_publisher, body, manifest.publisher_sig):
        return RejectReason.BAD_PUBLISHER_SIG
    try:
        verify_token(manifest.token, manifest.digest, state.trust_anchor_tsa)
    except (UntrustedSignerError, MismatchedImprintError):
        return RejectReason.UNTRUSTED_TIMESTAMP
    if hashlib.sha256(firmware).digest() != manifest.digest:
        return RejectReason.DIGEST_MISMATCH
    active = state.active()
    if manifest.version <= active.version or manifest.token.gen_time <= active.gen_time:
        return RejectReason.ROLLBACK
    if now >= manifest.expiry:
        return RejectReason.EXPIRED
    return None


@dataclass
class TraceStats:
    traces: int = 0
    ops: int = 0
    accepts: int = 0
    boots: int = 0
    reject_reasons: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)


def run_adversarial_traces(
    n_traces: int, seed: int = 0, ops_per_trace: int = 9
) -> TraceStats:
    """Random apply/interrupt/boot sequences against prebuilt manifests.

    The adversary holds no legitimate private keys: it can replay old
    manifests, corrupt firmware bytes, sign with its own keys, interrupt
    writes, and reboot. Violations collected (never asserted here):

    * a boot lands on a digest that never passed verification,
    * a rejection reason differs from the independent re-derivation,
    * a rejected apply changes state,
    * an accepted apply fails to advance version and gen_time.
    """
    store, tsa = make_pki(77)
    publisher = store.handle("publisher")
    anchor_tsa = store.public_key("tsa-root")
    anchor_pub = store.public_key("publisher")

    # Imposter PKI with the same key names but different key material.
    imposter = Keystore(666)
    imposter.generate_key("publisher")
    imposter.generate_key("tsa-root")
    imposter_tsa = TimestampAuthority(imposter, "tsa-root")

    firmwares = {v: firmware_image(v) for v in range(1, 10)}
    manifests = {
        v: build_manifest(
            firmwares[v], f"fw-{v}", v, 10 * v + 400, publisher, tsa, now=10 * v
        )
        for v in range(2, 10)
    }
    factory_digest = hashlib.sha256(firmwares[1]).digest()

    forgeries = []
    for v in (3, 5, 11):
        fake_fw = firmware_image(1000 + v)
        forgeries.append(
            (
                build_manifest(
                    fake_fw, f"fw-{v}", v, 10_000, imposter.handle("publisher"),
                    imposter_tsa, now=40,
                ),
                fake_fw,
            )
        )

    rng = random.Random(seed)
    stats = TraceStats()
    versions = sorted(manifests)

    for _ in range(n_traces):
        state = initial_state(factory_digest, 1, anchor_tsa, anchor_pub, gen_time=5)
        accepted_digests = {factory_digest}
        now = 20

        for _ in range(ops_per_trace):
            now += rng.randrange(0, 40)
            op = rng.choice(
                ("legit", "replay", "replay", "tamper", "forge", "interrupt", "reboot")
            )
            stats.ops += 1

            if op == "reboot":
                state, booted = boot(state)
                stats.boots += 1
                if booted is None:
                    stats.violations.append(("failstate_reached", now))
                else:
                    slot = state.slot(booted)
                    if not slot.verified or slot.image_digest not in accepted_digests:
                        stats.violations.append(("booted_unverified", now))
                continue

            if op == "interrupt":
                v = rng.choice(versions)
                state = interrupt_update(state, manifests[v], firmwares[v], rng.random())
                continue

            if op == "legit":
                candidates = [v for v in versions if v > state.active().version]
                v = rng.choice(candidates) if candidates else rng.choice(versions)
                manifest, firmware = manifests[v], firmwares[v]
            elif op == "replay":
                v = rng.choice(versions)
                manifest, firmware = manifests[v], firmwares[v]
            elif op == "tamper":
                v = rng.choice(versions)
                manifest = manifests[v]
                corrupt = bytearray(firmwares[v])
                corrupt[rng.randrange(len(corrupt))] ^= 1 + rng.randrange(255)
                firmware = bytes(corrupt)
            else:  # forge
                manifest, firmware = rng.choice(forgeries)

            want = expected_reason(state, manifest, firmware, now)
            before = state
            records: list[RejectionRecord] = []
            state = apply_update(state, manifest, firmware, now, events=records)

            if want is None:
                if records or state is before:
                    stats.violations.append(("accept_mismatch", op, now))
                    continue
                stats.accepts += 1
                accepted_digests.add(manifest.digest)
                if (
                    state.active().version <= before.active().version
                    or state.active().gen_time <= before.active().gen_time
                ):
                    stats.violations.append(("no_monotonic_advance", op, now))
                if state.mode is not DeviceMode.RUNNING:
                    stats.violations.append(("accept_not_running", op, now))
            else:
                got = records[0].reason if records else None
                if got != want.value:
                    stats.violations.append(("reason_mismatch", op, got, want.value, now))
                if state != before:
                    stats.violations.append(("reject_changed_state", op, now))
                stats.reject_reasons[want.value] = stats.reject_reasons.get(want.value, 0) + 1
        stats.traces += 1

    return stats


@dataclass
class LifecycleStats:
    ops: int = 0
    claims: int = 0
    rejections: int = 0
    violations: list = field(default_factory=list)


def run_lifecycle_ops(n_ops: int, seed: int = 0, n_devices: int = 12) -> LifecycleStats:
    """Random registry op sequences checked against a transition model.

    The model tracks only (status, owner) per device. Legal transitions:
    Unprovisioned -> Claimed (claim), Claimed -> Blacklisted | Deprovisioned,
    Unprovisioned -> Blacklisted, Deprovisioned -> Unprovisioned
    (re-register). Blacklisted is terminal. Owner is set exactly while
    Claimed; never two owners at once.
    """
    from fleetsec.identity import (
        Channel,
        ClaimRequest,
        DeviceRegistry,
        FleetsecError,
        Status,
    )

    rng = random.Random(seed)
    registry = DeviceRegistry(seed=seed)
    stats = LifecycleStats()
    device_ids = [f"dev-{i:02d}" for i in range(n_devices)]
    secrets = {d: b"secret-" + d.encode() for d in device_ids}
    model: dict[str, tuple] = {}  # device -> (status, owner)

    allowed = {
        (Status.UNPROVISIONED, Status.CLAIMED),
        (Status.UNPROVISIONED, Status.BLACKLISTED),
        (Status.CLAIMED, Status.BLACKLISTED),
        (Status.CLAIMED, Status.DEPROVISIONED),
        (Status.DEPROVISIONED, Status.UNPROVISIONED),
    }

    # blacklist is terminal, so keep it rare or the pool dies early
    op_mix = ("register", "register", "claim", "claim", "claim", "claim_bad",
              "deprovision", "deprovision", "blacklist")

    for step in range(n_ops):
        device = rng.choice(device_ids)
        op = rng.choice(op_mix)
        before = model.get(device)
        try:
            if op == "register":
                registry.register_device(device, secrets[device])
                outcome = (Status.UNPROVISIONED, None)
            elif op in ("claim", "claim_bad"):
                session = registry.device_connect(device, clock=step)
                secret = secrets[device] if op == "claim" else b"wrong-guess"
                user = f"user-{rng.randrange(5)}"
                rec = registry.claim(
                    session,
                    ClaimRequest(user, device, secret, rng.choice(list(Channel))),
                )
                outcome = (rec.status, rec.owner)
                stats.claims += 1
            elif op == "blacklist":
                rec = registry.blacklist(device)
                outcome = (Status.BLACKLISTED, before[1] if before else None)
            else:
                registry.deprovision(device)
                outcome = (Status.DEPROVISIONED, None)
        except FleetsecError:
            stats.rejections += 1
            # refused op must not have changed the record
            rec = registry._records.get(device)
            now_state = None if rec is None else (rec.status, rec.owner)
            want = before
            if before is not None and before[0] is Status.BLACKLISTED:
                want = (Status.BLACKLISTED, before[1])
            if now_state != want:
                stats.violations.append(("refused_op_changed_state", op, device, step))
            stats.ops += 1
            continue
        except ValueError:
            stats.rejections += 1
            stats.ops += 1
            continue

        if before is not None:
            if before[0] is Status.BLACKLISTED and outcome[0] is not Status.BLACKLISTED:
                stats.violations.append(("blacklist_not_sticky", op, device, step))
            elif before[0] is not outcome[0] and (before[0], outcome[0]) not in allowed:
                stats.violations.append(
                    ("illegal_transition", before[0].value, outcome[0].value, op, device)
                )
        rec = registry._records[device]
        if rec.status is Status.CLAIMED and rec.owner is None:
            stats.violations.append(("claimed_without_owner", device, step))
        if rec.status in (Status.UNPROVISIONED, Status.DEPROVISIONED) and rec.owner is not None:
            stats.violations.append(("owner_outside_claimed", device, step))
        model[device] = (rec.status, rec.owner)
        stats.ops += 1

    # secrets must not appear in the serialized form in any common encoding
    import base64
    import json as _json

    text = _json.dumps(registry.to_json_obj())
    for secret in secrets.values():
        for variant in (
            secret.decode(),
            secret.hex(),
            base64.b64encode(secret).decode(),
            base64.urlsafe_b64encode(secret).decode().rstrip("="),
        ):
            if variant in text:
                stats.violations.append(("secret_leaked", variant[:12]))
    return stats


# acceptance criterion verdicts, collected for the end-of-run summary
CRITERION_LINES: list[str] = []
