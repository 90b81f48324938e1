"""Run manifests: a replayable record of every command-line invocation.

A manifest captures the subcommand, its resolved flags, the seed, and
SHA-256 digests of every input and output file — and nothing else, so two
runs of the same command produce byte-identical manifests. Re-running the
recorded command must byte-reproduce every output; the ``replay``
subcommand re-executes and verifies exactly that.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaError

__all__ = [
    "RunManifest",
    "file_digest",
    "build_manifest",
    "manifest_path",
]


def file_digest(path) -> str:
    """SHA-256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out) -> str:
    """Where the manifest for a command with primary output ``out`` lives."""
    return str(Path(out).with_suffix("")) + ".manifest.json"


@dataclass(frozen=True)
class RunManifest:
    """One command's replayable record.

    ``flags`` maps long option names (without dashes) to their resolved
    values, in the order the command defines them; list values stand for
    repeated flags. ``inputs`` and ``outputs`` map file paths to digests.
    """

    command: str
    flags: dict
    seed: int
    inputs: dict
    outputs: dict

    def argv(self) -> list:
        """Reconstruct the argument vector that reproduces this run."""
        argv = [self.command]
        for key, value in self.flags.items():
            if value is None:
                continue
            values = value if isinstance(value, list) else [value]
            for v in values:
                argv.extend([f"--{key}", str(v)])
        return argv

    def to_json(self, path) -> None:
        payload = {
            "command": self.command,
            "flags": self.flags,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "RunManifest":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        missing = {"command", "flags", "seed", "inputs", "outputs"} - set(payload)
        if missing:
            raise SchemaError(f"{path}: manifest missing fields {sorted(missing)}")
        return cls(
            command=payload["command"],
            flags=payload["flags"],
            seed=payload["seed"],
            inputs=payload["inputs"],
            outputs=payload["outputs"],
        )


def build_manifest(command, flags, seed, input_paths, output_paths) -> RunManifest:
    """Assemble a manifest by digesting the named input and output files."""
    return RunManifest(
        command=command,
        flags=dict(flags),
        seed=seed,
        inputs={str(p): file_digest(p) for p in input_paths},
        outputs={str(p): file_digest(p) for p in output_paths},
    )
