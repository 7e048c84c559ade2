"""JSON reports written by the command-line tool."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from . import __version__
from .verdict import Verdict

__all__ = ["ReportFile", "REPORT_SCHEMA", "input_digest", "TOOL_NAME"]

TOOL_NAME = "ensemble-ctrl"

_number_or_null = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["tool", "version", "command", "input_digest", "system", "settings", "exit_code"],
    "additionalProperties": False,
    "properties": {
        "tool": {"const": TOOL_NAME},
        "version": {"type": "string"},
        "command": {"enum": ["analyze", "synthesize", "simulate"]},
        "input_digest": {"type": "string", "pattern": "^sha256:[0-9a-f]{64}$"},
        "system": {"type": "object"},
        "settings": {"type": "object"},
        "exit_code": {"type": "integer", "minimum": 0},
        "verdict": {
            "type": ["object", "null"],
            "required": ["status", "evidence", "gramians"],
            "properties": {
                "status": {"enum": ["Controllable", "NotControllable", "Inconclusive"]},
                "evidence": {"type": "array", "items": {
                    "type": "object", "required": ["reason"],
                    "properties": {"reason": {"type": "string"}}}},
                "gramians": {"type": "array", "items": {
                    "type": "object", "required": ["eta", "kappa", "rank", "sigma_min"]}},
            },
        },
        "synthesis": {
            "type": ["object", "null"],
            "required": ["schedule", "report"],
            "properties": {
                "schedule": {"type": "object", "required": ["T", "P", "values"]},
                "report": {"type": "object", "required": [
                    "predicted_error", "simulated_error", "epsilon", "energy", "converged"],
                    "properties": {"epsilon": _number_or_null}},
            },
        },
        "simulation": {"type": ["object", "null"]},
    },
}


def input_digest(system_dict: dict) -> str:
    """sha256 of the canonical JSON form of a system description."""
    canon = json.dumps(system_dict, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class ReportFile:
    command: str
    input_digest: str
    system: dict
    settings: dict
    exit_code: int
    verdict: Optional[Verdict] = None
    synthesis: Optional[dict] = None
    simulation: Optional[dict] = None
    version: str = __version__
    tool: str = field(default=TOOL_NAME)

    def to_dict(self) -> dict:
        d = {
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "input_digest": self.input_digest,
            "system": self.system,
            "settings": self.settings,
            "exit_code": self.exit_code,
            "verdict": self.verdict.to_dict() if self.verdict is not None else None,
            "synthesis": self.synthesis,
            "simulation": self.simulation,
        }
        # normalise through JSON so that tuples and numpy scalars become plain values
        d = json.loads(json.dumps(d))
        jsonschema.validate(d, REPORT_SCHEMA)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReportFile":
        jsonschema.validate(d, REPORT_SCHEMA)
        v = d.get("verdict")
        return cls(
            command=d["command"], input_digest=d["input_digest"], system=d["system"],
            settings=d["settings"], exit_code=d["exit_code"],
            verdict=Verdict.from_dict(v) if v is not None else None,
            synthesis=d.get("synthesis"), simulation=d.get("simulation"),
            version=d["version"], tool=d["tool"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "ReportFile":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
