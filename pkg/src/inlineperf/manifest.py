"""Reproducibility plumbing: every pipeline stage writes a manifest with
content digests of its inputs and outputs, and stamps each artifact with
the invocation digest that produced it.

The invocation digest covers tool version, subcommand, resolved
configuration, seed, and input digests. Outputs and the wall-clock
timestamp stay outside it, so re-runs produce byte-identical artifacts
while the manifest file itself differs only in its wallclock field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

TOOL_NAME = "inlineperf"
TOOL_VERSION = "0.1.0"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_text(text: str) -> str:
    return sha256_hex(text.encode("utf-8"))


def digest_file(path: Path) -> str:
    return sha256_hex(Path(path).read_bytes())


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    tool: str = TOOL_NAME
    version: str = TOOL_VERSION

    def invocation_digest(self) -> str:
        return digest_text(
            _canonical(
                {
                    "tool": self.tool,
                    "version": self.version,
                    "subcommand": self.subcommand,
                    "config": self.config,
                    "seed": self.seed,
                    "inputs": self.inputs,
                }
            )
        )

    def to_obj(self) -> dict:
        return {
            "tool": self.tool,
            "version": self.version,
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "invocation": self.invocation_digest(),
            "wallclock": datetime.now(timezone.utc).isoformat(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), indent=2) + "\n"


def stamp_obj(obj: dict, invocation: str) -> dict:
    """Copy of a JSON artifact object carrying the producing invocation."""
    out = dict(obj)
    out["manifest"] = invocation
    return out


def stamp_csv(text: str, invocation: str) -> str:
    return f"# manifest={invocation}\n" + text


def write_artifact(path: Path, text: str, manifest: RunManifest, name: str | None = None) -> str:
    """Write text, record its digest under the file's name."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    digest = digest_text(text)
    manifest.outputs[name or path.name] = digest
    return digest


def manifest_identity(obj: dict) -> dict:
    """Manifest content with the volatile wallclock field removed, for
    byte-stability comparisons across runs."""
    out = dict(obj)
    out.pop("wallclock", None)
    return out
