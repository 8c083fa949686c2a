"""Output-file plumbing shared by the command-line entry points.

All files are UTF-8 with comma separators and newline line endings.
Floats are written with 17 significant digits so that re-reading them
recovers the exact double; infinities appear as lowercase inf.  A RunDir
tracks every file created during a command so that a failed run can
remove its partial outputs; the manifest is always written last and a
run without one is not valid.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time


def format_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDir:
    """Tracks files written into an output directory for one command run."""

    def __init__(self, root: str):
        self.root = root
        self.created: list[str] = []
        os.makedirs(root, exist_ok=True)
        self._t0 = time.monotonic()

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def write_csv(self, name: str, header, rows) -> str:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(format_value(v) for v in row) + "\n")
        self.created.append(name)
        return p

    def write_json(self, name: str, payload) -> str:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.created.append(name)
        return p

    def write_manifest(self, command: str, version: str, master_seed: int, config) -> str:
        outputs = [
            {"path": name, "sha256": sha256_file(self.path(name))}
            for name in self.created
        ]
        payload = {
            "command": command,
            "artifact_version": version,
            "master_seed": master_seed,
            "config": config,
            "duration_seconds": time.monotonic() - self._t0,
            "outputs": outputs,
        }
        p = self.path("run_manifest.json")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p

    def cleanup(self) -> None:
        """Remove the files created so far; used when a run fails."""
        for name in self.created:
            try:
                os.remove(self.path(name))
            except OSError:
                pass
        self.created = []
