"""Run-directory layout: config snapshot, artifacts, checksummed manifest.

A run starts with a STATUS file saying ``incomplete``; on success the
manifest (sha256 per artifact) is written and STATUS flips to ``complete``.
Wall-clock information never enters manifest-tracked files, so identical
config+seed reruns produce identical bytes.
"""

from __future__ import annotations

import hashlib
import os

from .errors import CorruptFileError

STATUS_FILE = "STATUS"
MANIFEST_FILE = "MANIFEST.txt"


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDirectory:
    def __init__(self, path: str):
        self.path = path
        self._artifacts: list[str] = []
        os.makedirs(path, exist_ok=True)
        self._write_status("incomplete")

    def _write_status(self, status: str) -> None:
        with open(os.path.join(self.path, STATUS_FILE), "w") as fh:
            fh.write(status + "\n")

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def register(self, *names: str) -> None:
        for name in names:
            if name not in self._artifacts:
                self._artifacts.append(name)

    def write_text(self, name: str, text: str) -> str:
        path = self.file(name)
        with open(path, "w") as fh:
            fh.write(text)
        self.register(name)
        return path

    def finalize(self) -> None:
        lines = []
        for name in sorted(self._artifacts):
            lines.append(f"{_sha256(self.file(name))}  {name}")
        with open(self.file(MANIFEST_FILE), "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
        self._write_status("complete")

    @staticmethod
    def verify(path: str) -> None:
        """Raise CorruptFileError if any manifest checksum fails."""
        manifest = os.path.join(path, MANIFEST_FILE)
        if not os.path.exists(manifest):
            raise CorruptFileError(f"no manifest in {path}")
        with open(manifest) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                digest, name = line.split("  ", 1)
                target = os.path.join(path, name)
                if not os.path.exists(target):
                    raise CorruptFileError(f"missing artifact {name} in {path}")
                if _sha256(target) != digest:
                    raise CorruptFileError(f"checksum mismatch for {name} in {path}")
