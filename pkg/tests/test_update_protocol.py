import dataclasses
import hashlib
import json

import pytest

from fleetsec.keystore import Keystore
from fleetsec.tsa import TimestampAuthority
from fleetsec.update_protocol import (
    DeviceMode,
    ExpiryInPastError,
    FirmwareManifest,
    NotInFailStateError,
    RecoveryRefusedError,
    RejectReason,
    Slot,
    Verdict,
    apply_update,
    boot,
    build_manifest,
    decode_manifest,
    device_verify,
    initial_state,
    interrupt_update,
    recover_to_trusted,
)

from helpers import expected_reason, firmware_image, make_pki, run_adversarial_traces


@pytest.fixture()
def env(pki):
    """Factory device on v1 plus a valid v2 manifest, built at now=10."""
    store, tsa = pki
    fw1 = firmware_image(1)
    fw2 = firmware_image(2)
    state = initial_state(
        hashlib.sha256(fw1).digest(),
        1,
        store.public_key("tsa-root"),
        store.public_key("publisher"),
        gen_time=5,
    )
    manifest = build_manifest(fw2, "fw-2", 2, 100, store.handle("publisher"), tsa, now=10)
    return store, tsa, state, manifest, fw1, fw2


# --- the four verification vectors ---------------------------------------


def test_vector_accept(env):
    _, _, state, manifest, _, fw2 = env
    assert device_verify(state, manifest, fw2, now=50) == Verdict.accept()


def test_vector_rollback(env):
    store, tsa, _, manifest, fw1, fw2 = env
    # device already runs version 2; a version-1 manifest must be refused
    newer = initial_state(
        hashlib.sha256(fw2).digest(),
        2,
        store.public_key("tsa-root"),
        store.public_key("publisher"),
        gen_time=5,
    )
    old = build_manifest(fw1, "fw-1", 1, 100, store.handle("publisher"), tsa, now=10)
    verdict = device_verify(newer, old, fw1, now=50)
    assert verdict == Verdict.reject(RejectReason.ROLLBACK)
    assert str(verdict) == "Reject(Rollback)"


def test_vector_expired(env):
    _, _, state, manifest, _, fw2 = env
    assert device_verify(state, manifest, fw2, now=100) == Verdict.reject(
        RejectReason.EXPIRED
    )
    assert device_verify(state, manifest, fw2, now=101).reason is RejectReason.EXPIRED


def test_vector_digest_mismatch(env):
    _, _, state, manifest, _, fw2 = env
    tampered = bytearray(fw2)
    tampered[7] ^= 0x40
    before = dataclasses.replace(state)
    verdict = device_verify(state, manifest, bytes(tampered), now=50)
    assert verdict == Verdict.reject(RejectReason.DIGEST_MISMATCH)
    assert state == before


# --- check order ----------------------------------------------------------


def test_bad_signature_wins_over_everything(env):
    store, tsa, state, manifest, _, fw2 = env
    # wrong signer, stale version, tampered bytes, past expiry: the
    # signature check must still be the one that names the reason
    imposter = Keystore(404)
    imposter.generate_key("publisher")
    forged = build_manifest(fw2, "fw-0", 0, 20, imposter.handle("publisher"), tsa, now=10)
    verdict = device_verify(state, forged, fw2[:-1], now=999)
    assert verdict.reason is RejectReason.BAD_PUBLISHER_SIG
    assert expected_reason(state, forged, fw2[:-1], 999) is RejectReason.BAD_PUBLISHER_SIG


def test_untrusted_timestamp_beats_digest_and_freshness(env):
    store, _, state, _, _, fw2 = env
    rogue_store = Keystore(405)
    rogue_store.generate_key("tsa-root")
    rogue_tsa = TimestampAuthority(rogue_store, "tsa-root")
    manifest = build_manifest(fw2, "fw-0", 0, 20, store.handle("publisher"), rogue_tsa, now=10)
    verdict = device_verify(state, manifest, fw2[:-1], now=999)
    assert verdict.reason is RejectReason.UNTRUSTED_TIMESTAMP


def test_digest_beats_freshness_and_expiry(env):
    store, tsa, state, _, fw1, _ = env
    manifest = build_manifest(fw1, "fw-0", 0, 20, store.handle("publisher"), tsa, now=10)
    verdict = device_verify(state, manifest, firmware_image(9), now=999)
    assert verdict.reason is RejectReason.DIGEST_MISMATCH


def test_rollback_beats_expiry(env):
    store, tsa, state, _, fw1, _ = env
    manifest = build_manifest(fw1, "fw-1", 1, 20, store.handle("publisher"), tsa, now=10)
    verdict = device_verify(state, manifest, fw1, now=999)
    assert verdict.reason is RejectReason.ROLLBACK


def test_gen_time_alone_is_not_fresh_enough(env):
    # version bumps but the token is older than the installed one:
    # both halves of the freshness conjunction are required
    store, tsa, _, _, _, fw2 = env
    state = initial_state(
        hashlib.sha256(firmware_image(1)).digest(),
        1,
        store.public_key("tsa-root"),
        store.public_key("publisher"),
        gen_time=30,
    )
    manifest = build_manifest(fw2, "fw-2", 2, 100, store.handle("publisher"), tsa, now=10)
    assert manifest.token.gen_time == 10
    verdict = device_verify(state, manifest, fw2, now=50)
    assert verdict.reason is RejectReason.ROLLBACK


def test_verify_matches_independent_oracle_on_mixed_corpus(env):
    store, tsa, state, manifest, fw1, fw2 = env
    imposter = Keystore(406)
    imposter.generate_key("publisher")
    candidates = [
        (manifest, fw2, 50),
        (manifest, fw2, 100),
        (manifest, fw1, 50),
        (build_manifest(fw1, "fw-1", 1, 99, store.handle("publisher"), tsa, now=11), fw1, 50),
        (build_manifest(fw2, "fw-2", 2, 99, imposter.handle("publisher"), tsa, now=11), fw2, 50),
    ]
    for m, fw, now in candidates:
        want = expected_reason(state, m, fw, now)
        got = device_verify(state, m, fw, now)
        if want is None:
            assert got.accepted
        else:
            assert got.reason is want


# --- apply / interrupt / boot ---------------------------------------------


def test_accept_flips_active_slot(env):
    _, _, state, manifest, _, fw2 = env
    after = apply_update(state, manifest, fw2, now=50)
    assert after.active_slot is Slot.B
    assert after.active().version == 2
    assert after.active().gen_time == 10
    assert after.active().verified
    assert after.slot(Slot.A) == state.slot(Slot.A)
    assert after.mode is DeviceMode.RUNNING


def test_reject_leaves_state_deep_equal(env):
    _, _, state, manifest, _, fw2 = env
    events = []
    after = apply_update(state, manifest, fw2[:-1], now=50, events=events)
    assert after == state
    assert [ (e.firmware_id, e.version, e.reason, e.time) for e in events ] == [
        ("fw-2", 2, "DigestMismatch", 50)
    ]


def test_two_updates_ping_pong_slots(env):
    store, tsa, state, manifest, _, fw2 = env
    fw3 = firmware_image(3)
    m3 = build_manifest(fw3, "fw-3", 3, 200, store.handle("publisher"), tsa, now=60)
    s1 = apply_update(state, manifest, fw2, now=50)
    s2 = apply_update(s1, m3, fw3, now=70)
    assert s2.active_slot is Slot.A
    assert s2.active().version == 3
    assert s2.inactive().version == 2


def test_replay_of_accepted_manifest_is_rollback(env):
    _, _, state, manifest, _, fw2 = env
    s1 = apply_update(state, manifest, fw2, now=50)
    events = []
    s2 = apply_update(s1, manifest, fw2, now=55, events=events)
    assert s2 == s1
    assert events[0].reason == "Rollback"


def test_interrupt_keeps_active_slot_and_marks_updating(env):
    _, _, state, manifest, _, fw2 = env
    for cut in (0.0, 0.25, 0.99):
        torn = interrupt_update(state, manifest, fw2, cut)
        assert torn.active_slot is state.active_slot
        assert torn.slot(Slot.A) == state.slot(Slot.A)
        assert torn.mode is DeviceMode.UPDATING
        assert not torn.inactive().verified


def test_interrupt_rejects_bad_cut_point(env):
    _, _, state, manifest, _, fw2 = env
    with pytest.raises(ValueError):
        interrupt_update(state, manifest, fw2, 1.0)
    with pytest.raises(ValueError):
        interrupt_update(state, manifest, fw2, -0.1)


def test_boot_after_interrupt_falls_back_to_old_slot(env):
    _, _, state, manifest, _, fw2 = env
    torn = interrupt_update(state, manifest, fw2, 0.5)
    booted_state, slot = boot(torn)
    assert slot is Slot.A
    assert booted_state.mode is DeviceMode.RUNNING
    assert booted_state.active().version == 1


def test_interrupt_then_full_apply_succeeds(env):
    _, _, state, manifest, _, fw2 = env
    torn = interrupt_update(state, manifest, fw2, 0.5)
    recovered, _ = boot(torn)
    after = apply_update(recovered, manifest, fw2, now=50)
    assert after.active().version == 2


def test_boot_normal_state_boots_active(env):
    _, _, state, _, _, _ = env
    booted_state, slot = boot(state)
    assert slot is Slot.A
    assert booted_state == state


def test_boot_with_no_verified_slot_parks_in_fail_state(env):
    _, _, state, manifest, _, fw2 = env
    # tear the copy while also invalidating the active slot
    torn = interrupt_update(state, manifest, fw2, 0.5)
    bricked = dataclasses.replace(
        torn, slot_a=dataclasses.replace(torn.slot_a, verified=False)
    )
    failed, slot = boot(bricked)
    assert slot is None
    assert failed.mode is DeviceMode.FAIL_STATE


def test_fail_state_refuses_updates(env):
    _, _, state, manifest, _, fw2 = env
    failed = dataclasses.replace(state, mode=DeviceMode.FAIL_STATE)
    events = []
    after = apply_update(failed, manifest, fw2, now=50, events=events)
    assert after == failed
    assert events[0].reason == "FailState"


# --- recovery ---------------------------------------------------------------


def _failed_state(env):
    _, _, state, manifest, _, fw2 = env
    torn = interrupt_update(state, manifest, fw2, 0.5)
    bricked = dataclasses.replace(
        torn, slot_a=dataclasses.replace(torn.slot_a, verified=False)
    )
    failed, _ = boot(bricked)
    return failed


def test_recover_installs_factory_image_in_slot_a(env):
    store, tsa, _, _, fw1, _ = env
    failed = _failed_state(env)
    factory = build_manifest(fw1, "factory", 1, 10_000, store.handle("publisher"), tsa, now=60)
    recovered = recover_to_trusted(failed, factory, fw1, now=70)
    assert recovered.mode is DeviceMode.RUNNING
    assert recovered.active_slot is Slot.A
    assert recovered.active().version == 1
    assert not recovered.slot(Slot.B).verified


def test_recover_waives_only_the_freshness_check(env):
    # manifest version equals the bricked device's last active version;
    # normal verification would call this a rollback
    store, tsa, _, _, fw1, _ = env
    failed = _failed_state(env)
    factory = build_manifest(fw1, "factory", 0, 10_000, store.handle("publisher"), tsa, now=1)
    recovered = recover_to_trusted(failed, factory, fw1, now=70)
    assert recovered.mode is DeviceMode.RUNNING


def test_recover_refuses_bad_publisher_sig(env):
    _, tsa, _, _, fw1, _ = env
    failed = _failed_state(env)
    imposter = Keystore(407)
    imposter.generate_key("publisher")
    factory = build_manifest(fw1, "factory", 1, 10_000, imposter.handle("publisher"), tsa, now=60)
    with pytest.raises(RecoveryRefusedError) as exc:
        recover_to_trusted(failed, factory, fw1, now=70)
    assert exc.value.reason is RejectReason.BAD_PUBLISHER_SIG


def test_recover_refuses_expired_factory_manifest(env):
    store, tsa, _, _, fw1, _ = env
    failed = _failed_state(env)
    factory = build_manifest(fw1, "factory", 1, 80, store.handle("publisher"), tsa, now=60)
    with pytest.raises(RecoveryRefusedError) as exc:
        recover_to_trusted(failed, factory, fw1, now=80)
    assert exc.value.reason is RejectReason.EXPIRED


def test_recover_requires_fail_state(env):
    store, tsa, state, _, fw1, _ = env
    factory = build_manifest(fw1, "factory", 1, 10_000, store.handle("publisher"), tsa, now=60)
    with pytest.raises(NotInFailStateError):
        recover_to_trusted(state, factory, fw1, now=70)


# --- purity and monotonicity -------------------------------------------------


def test_device_verify_is_pure(env):
    _, _, state, manifest, _, fw2 = env
    snapshot = dataclasses.replace(state)
    for now in (50, 100, 0):
        device_verify(state, manifest, fw2, now)
    assert state == snapshot


def test_accepted_versions_and_gen_times_strictly_increase(env):
    store, tsa, state, _, _, _ = env
    versions = [state.active().version]
    gen_times = [state.active().gen_time]
    for v in range(2, 8):
        fw = firmware_image(v)
        m = build_manifest(
            fw, f"fw-{v}", v, 1000, store.handle("publisher"), tsa, now=10 * v
        )
        state = apply_update(state, m, fw, now=10 * v + 1)
        versions.append(state.active().version)
        gen_times.append(state.active().gen_time)
    assert versions == sorted(set(versions))
    assert gen_times == sorted(set(gen_times))


# --- manifest construction and round trips ----------------------------------


def test_build_manifest_rejects_past_expiry(pki):
    store, tsa = pki
    with pytest.raises(ExpiryInPastError):
        build_manifest(b"fw", "fw-1", 1, 5, store.handle("publisher"), tsa, now=10)
    with pytest.raises(ExpiryInPastError):
        build_manifest(b"fw", "fw-1", 1, 10, store.handle("publisher"), tsa, now=10)


def test_build_manifest_is_deterministic_under_same_seed():
    built = []
    for _ in range(2):
        store, tsa = make_pki(seed=99)
        m = build_manifest(
            firmware_image(2), "fw-2", 2, 100, store.handle("publisher"), tsa, now=10
        )
        built.append(m.encode())
    assert built[0] == built[1]


def test_manifest_binary_round_trip(env):
    _, _, _, manifest, _, _ = env
    assert decode_manifest(manifest.encode()) == manifest


def test_manifest_json_round_trip(env):
    _, _, _, manifest, _, _ = env
    obj = json.loads(json.dumps(manifest.to_json_obj()))
    assert FirmwareManifest.from_json_obj(obj) == manifest
    assert list(obj) == ["firmware_id", "version", "digest", "expiry", "token", "publisher_sig"]


def test_manifest_invariants_hold_for_honest_builds(env):
    _, _, _, manifest, _, _ = env
    assert manifest.token.imprint == manifest.digest
    assert manifest.expiry > manifest.token.gen_time


# --- randomized adversarial traces -------------------------------------------


def test_thousand_adversarial_traces_hold_the_safety_invariants():
    stats = run_adversarial_traces(1000, seed=7)
    assert stats.violations == []
    assert stats.traces == 1000
    # the corpus must actually exercise both outcomes and several reasons
    assert stats.accepts > 100
    assert set(stats.reject_reasons) >= {"BadPublisherSig", "Rollback", "DigestMismatch"}
