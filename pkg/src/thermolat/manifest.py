"""Reproducibility manifests for experiment suites."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

TOOL_VERSION = "0.1.0"


def content_hash(obj) -> str:
    """Canonical content hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RunManifest:
    suite: str
    config_echo: dict
    seed: int | None = None
    grid_summary: dict = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    input_hash: str = ""
    started: str | None = None
    finished: str | None = None
    checks: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.input_hash:
            self.input_hash = content_hash(self.config_echo)

    def start(self, timestamps: bool = True):
        if timestamps:
            self.started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        return self

    def finish(self, timestamps: bool = True):
        if timestamps:
            self.finished = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        return self

    def record(self, name: str, passed: bool, detail=None):
        self.checks[name] = {"passed": bool(passed)}
        if detail is not None:
            self.checks[name]["detail"] = detail

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values()) if self.checks else True

    def to_json(self) -> str:
        d = {
            "suite": self.suite,
            "config_echo": self.config_echo,
            "seed": self.seed,
            "grid_summary": self.grid_summary,
            "tool_version": self.tool_version,
            "input_hash": self.input_hash,
            "started": self.started,
            "finished": self.finished,
            "checks": self.checks,
            "artifacts": self.artifacts,
        }
        return json.dumps(d, indent=2, sort_keys=True)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
        return path
