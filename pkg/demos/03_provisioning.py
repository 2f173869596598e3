"""Device identity from first boot to retirement.

Devices ship with a claim secret. Whoever presents it first over a
rendezvous session owns the device; everyone else gets the same refusal
whether the device is claimed or not, so the secret cannot be used as a
probe. This script claims a device, fends off a thief, catches a cloned
credential, and retires everything cleanly.

Run:  python3 demos/03_provisioning.py
"""

import tempfile
from pathlib import Path

from fleetsec import ClaimRequest, DeviceRegistry
from fleetsec.identity import (
    AlreadyClaimedError,
    BlacklistedError,
    InvalidSessionError,
    SecretMismatchError,
)

registry = DeviceRegistry(seed=42)

registry.register_device("therm-1", b"factory-secret-1")
registry.register_device("therm-2", b"factory-secret-2")
print(f"registered: {registry.device_ids()}")

# A claim needs a live session from the device plus the right secret.
session = registry.device_connect("therm-1", clock=100)
print(f"session {session.session_id} (encrypted={session.encrypted})")
rec = registry.claim(session, ClaimRequest("alice", "therm-1", b"factory-secret-1"))
print(f"therm-1: {rec.status.value} by {rec.owner}, key {rec.device_pub.key_id}")

# Wrong secret, and the right secret against an already claimed device,
# both fail without leaking which case it was to a guesser.
session = registry.device_connect("therm-1", clock=110)
try:
    registry.claim(session, ClaimRequest("mallory", "therm-1", b"guess"))
except SecretMismatchError as e:
    print(f"mallory with a bad secret: {type(e).__name__}")
session = registry.device_connect("therm-1", clock=111)
try:
    registry.claim(session, ClaimRequest("mallory", "therm-1", b"factory-secret-1"))
except AlreadyClaimedError as e:
    print(f"mallory with the stolen secret: {type(e).__name__}")

# A device seen talking from two places at once has a cloned credential.
# Sequential sightings just look like a device that moved.
sightings = [
    ("therm-1", "home-gw", 0), ("therm-1", "home-gw", 50),
    ("therm-1", "warehouse-vpn", 40), ("therm-1", "warehouse-vpn", 90),
    ("therm-2", "home-gw", 0), ("therm-2", "home-gw", 50),
    ("therm-2", "office-gw", 60), ("therm-2", "office-gw", 90),
]
flagged = registry.detect_credential_clone(sightings)
print(f"clone flags: {flagged}")

# Blacklisting kills open sessions and is terminal for the identity.
session = registry.device_connect("therm-1", clock=200)
registry.blacklist("therm-1")
try:
    registry.claim(session, ClaimRequest("alice", "therm-1", b"factory-secret-1"))
except InvalidSessionError:
    print("blacklisting killed the session that was already open")
try:
    registry.device_connect("therm-1", clock=201)
except BlacklistedError:
    print("and a blacklisted device cannot open a new one")
print(f"therm-1 status: {registry.record('therm-1').status.value}, "
      f"last owner kept for audit: {registry.record('therm-1').owner}")

# Deprovision returns a claimed device to the unprovisioned pool; the
# next owner's claim mints a fresh key generation, so a resold device
# cannot be tracked by its old public key.
registry.claim(registry.device_connect("therm-2", clock=210),
               ClaimRequest("bob", "therm-2", b"factory-secret-2"))
old_key = registry.record("therm-2").device_pub.key_id
registry.deprovision("therm-2")
registry.register_device("therm-2", b"resale-secret")
registry.claim(registry.device_connect("therm-2", clock=220),
               ClaimRequest("carol", "therm-2", b"resale-secret"))
print(f"therm-2 key rotated: {old_key} -> {registry.record('therm-2').device_pub.key_id}")

# The registry serializes without any claim secret in it, in any encoding.
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "registry.json"
    registry.save(path)
    text = path.read_text()
    assert "factory-secret" not in text and "resale-secret" not in text
    reloaded = DeviceRegistry.load(path)
    print(f"round trip ok, {len(reloaded.device_ids())} devices, secrets stay out of the file")
