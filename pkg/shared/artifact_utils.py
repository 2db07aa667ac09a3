"""
Shared integrity utilities for pipeline artifacts.

Every artifact written by the pipeline gets a sibling manifest recording its
SHA-256 digest, the master seed, the config digest and the digests of the
artifacts it was derived from. Downstream stages re-hash their inputs and
refuse to run on stale files.
"""

import json
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from cryptography.hazmat.primitives import hashes

from shared.errors import StaleArtifactError

MANIFEST_SUFFIX = ".manifest.json"
MANIFEST_VERSION = 1

_CHUNK = 1 << 20


class ArtifactDigest:
    """SHA-256 digests of files and JSON-compatible documents."""

    @staticmethod
    def of_bytes(data: bytes) -> str:
        """Digest raw bytes."""
        digest = hashes.Hash(hashes.SHA256())
        digest.update(data)
        return digest.finalize().hex()

    @staticmethod
    def of_file(path: str) -> str:
        """Digest a file in chunks."""
        digest = hashes.Hash(hashes.SHA256())
        with open(path, "rb") as f:
            while True:
                chunk = f.read(_CHUNK)
                if not chunk:
                    break
                digest.update(chunk)
        return digest.finalize().hex()

    @staticmethod
    def canonical_json(document: Any) -> str:
        """Serialize with sorted keys and no whitespace."""
        return json.dumps(document, sort_keys=True, separators=(",", ":"), allow_nan=True)

    @staticmethod
    def of_json(document: Any) -> str:
        """Digest the canonical JSON form of a document."""
        return ArtifactDigest.of_bytes(ArtifactDigest.canonical_json(document).encode("utf-8"))


def manifest_path(artifact_path: str) -> str:
    """Path of the manifest that accompanies an artifact."""
    return artifact_path + MANIFEST_SUFFIX


def write_manifest(artifact_path: str, *, kind: str, master_seed: int,
                   config_digest: str, inputs: Optional[Dict[str, str]] = None,
                   warnings: Optional[List[str]] = None,
                   provenance: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Hash an artifact and write its manifest next to it."""
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "artifact": os.path.basename(artifact_path),
        "kind": kind,
        "sha256": ArtifactDigest.of_file(artifact_path),
        "master_seed": int(master_seed),
        "config_digest": config_digest,
        "inputs": dict(inputs or {}),
        "warnings": list(warnings or []),
        "provenance": provenance or {},
        "created": datetime.now(timezone.utc).isoformat(),
    }
    with open(manifest_path(artifact_path), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def read_manifest(artifact_path: str) -> Dict[str, Any]:
    """Load the manifest of an artifact."""
    path = manifest_path(artifact_path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing manifest for {artifact_path} (expected {path})")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def verify_artifact(artifact_path: str) -> str:
    """Check an artifact against its manifest; return its digest.

    Recorded inputs that still exist must hash to the digests the manifest
    chained, so an artifact built from since-regenerated inputs is stale too.
    Inputs that were removed are not checked.
    """
    if not os.path.exists(artifact_path):
        raise FileNotFoundError(f"missing artifact {artifact_path}")
    manifest = read_manifest(artifact_path)
    actual = ArtifactDigest.of_file(artifact_path)
    if actual != manifest["sha256"]:
        raise StaleArtifactError(artifact_path, manifest["sha256"], actual)
    for upstream, recorded in manifest.get("inputs", {}).items():
        if not os.path.isfile(upstream):
            continue
        current = ArtifactDigest.of_file(upstream)
        if current != recorded:
            raise StaleArtifactError(upstream, recorded, current)
    return actual
