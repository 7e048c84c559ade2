"""Ensemble system descriptions: JSON files, validation and sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .config import VerdictConfig
from .expr import ExprError, ExprSyntaxError, evaluate, parse
from .field import DEFAULT_GRID, CompactInterval, FieldDomainError, SampledField, sample

__all__ = ["EnsembleSystem", "SystemFileError", "SYSTEM_SCHEMA", "load_system", "system_from_dict"]

TOLERANCE_KEYS = ("n_eta", "n_eta_channel", "n_tuples", "tol_mono", "tol_merge", "tol_val",
                  "tol_rank", "tol_vanish", "cond_max", "tol_recon", "seed")

_expr_matrix = {
    "type": "array", "minItems": 1,
    "items": {"type": "array", "minItems": 1, "items": {"type": "string"}},
}
_expr_vector = {"type": "array", "minItems": 1, "items": {"type": "string"}}
_bound = {"type": ["number", "string"]}

SYSTEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["parameter", "A", "B"],
    "additionalProperties": False,
    "properties": {
        "parameter": {
            "type": "object",
            "required": ["interval"],
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z_0-9]*$"},
                "interval": {"type": "array", "items": _bound, "minItems": 2, "maxItems": 2},
                "grid": {"type": "integer", "minimum": 3},
            },
        },
        "A": _expr_matrix,
        "B": _expr_matrix,
        "x0": _expr_vector,
        "xF": _expr_vector,
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "integer" if k in ("n_eta", "n_eta_channel", "n_tuples", "seed")
                               else "number"} for k in TOLERANCE_KEYS},
        },
        "description": {"type": "string"},
    },
}


class SystemFileError(ValueError):
    """Invalid system description; ``pointer`` is a JSON pointer to the culprit."""

    def __init__(self, message: str, pointer: str = "", offset: Optional[int] = None):
        self.pointer = pointer
        self.offset = offset
        where = f" at {pointer}" if pointer else ""
        super().__init__(f"{message}{where}")


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path) or "/"


@dataclass
class EnsembleSystem:
    """``dx/dt = A(beta) x + B(beta) u`` on a compact interval, sampled on a grid."""

    parameter: str
    interval: CompactInterval
    n_grid: int
    A_text: list[list[str]]
    B_text: list[list[str]]
    x0_text: Optional[list[str]] = None
    xF_text: Optional[list[str]] = None
    tolerances: dict = field(default_factory=dict)
    A: SampledField = field(init=False, repr=False)
    B: SampledField = field(init=False, repr=False)
    x0: Optional[SampledField] = field(init=False, repr=False, default=None)
    xF: Optional[SampledField] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        n = len(self.A_text)
        if any(len(r) != n for r in self.A_text):
            raise SystemFileError("A must be square", "/A")
        if len(self.B_text) != n:
            raise SystemFileError(f"B has {len(self.B_text)} rows but A is {n}x{n}", "/B")
        m = len(self.B_text[0])
        for i, r in enumerate(self.B_text):
            if len(r) != m:
                raise SystemFileError("B rows differ in length", f"/B/{i}")
        for name, vec in (("x0", self.x0_text), ("xF", self.xF_text)):
            if vec is not None and len(vec) != n:
                raise SystemFileError(f"{name} has {len(vec)} entries, expected {n}", f"/{name}")
        self.A = self._sample(self.A_text, "A")
        self.B = self._sample(self.B_text, "B")
        self.x0 = self._sample([[t] for t in self.x0_text], "x0") if self.x0_text else None
        self.xF = self._sample([[t] for t in self.xF_text], "xF") if self.xF_text else None

    def _sample(self, texts: list[list[str]], name: str) -> SampledField:
        exprs = []
        for i, row in enumerate(texts):
            out = []
            for j, t in enumerate(row):
                ptr = f"/{name}/{i}" if name in ("x0", "xF") else f"/{name}/{i}/{j}"
                try:
                    out.append(parse(t, self.parameter))
                except ExprSyntaxError as err:
                    raise SystemFileError(str(err), ptr, err.offset) from None
            exprs.append(out)
        try:
            return sample(exprs, self.interval, self.n_grid)
        except FieldDomainError as err:
            i, j = err.entry
            ptr = f"/{name}/{i}" if name in ("x0", "xF") else f"/{name}/{i}/{j}"
            raise SystemFileError(str(err), ptr) from None

    @property
    def n(self) -> int:
        return len(self.A_text)

    @property
    def m(self) -> int:
        return len(self.B_text[0])

    def config(self, **overrides) -> VerdictConfig:
        """Verdict settings: file tolerances, then ``overrides`` (None ignored)."""
        return VerdictConfig(n_grid=self.n_grid).with_overrides(**self.tolerances).with_overrides(**overrides)

    def resample(self, n_grid: int) -> "EnsembleSystem":
        return EnsembleSystem(self.parameter, self.interval, n_grid, self.A_text, self.B_text,
                              self.x0_text, self.xF_text, dict(self.tolerances))

    def to_dict(self) -> dict:
        d = {
            "parameter": {"name": self.parameter, "interval": self.interval.as_list(),
                          "grid": self.n_grid},
            "A": self.A_text,
            "B": self.B_text,
        }
        if self.x0_text:
            d["x0"] = self.x0_text
        if self.xF_text:
            d["xF"] = self.xF_text
        if self.tolerances:
            d["tolerances"] = dict(self.tolerances)
        return d


def _bound_value(v, ptr: str) -> float:
    if isinstance(v, (int, float)):
        return float(v)
    try:
        e = parse(v, "_")
        return float(evaluate(e, 0.0))
    except ExprError as err:
        raise SystemFileError(f"interval bound {v!r} is not a constant: {err}", ptr) from None


def system_from_dict(d: dict, n_grid: Optional[int] = None) -> EnsembleSystem:
    """Validate a decoded system description and sample it.

    Raises
    ------
    SystemFileError
        On schema violations (with a JSON pointer) and on expression errors
        (with the pointer and the byte offset inside the expression).
    """
    validator = jsonschema.Draft202012Validator(SYSTEM_SCHEMA)
    errors = sorted(validator.iter_errors(d), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SystemFileError(f"schema violation: {err.message}", _pointer(err.absolute_path))
    par = d["parameter"]
    lo = _bound_value(par["interval"][0], "/parameter/interval/0")
    hi = _bound_value(par["interval"][1], "/parameter/interval/1")
    try:
        K = CompactInterval(lo, hi)
    except ValueError as err:
        raise SystemFileError(str(err), "/parameter/interval") from None
    grid = n_grid or par.get("grid", DEFAULT_GRID)
    if grid < 3:
        raise SystemFileError("grid must have at least 3 points", "/parameter/grid")
    return EnsembleSystem(par.get("name", "beta"), K, int(grid), d["A"], d["B"],
                          d.get("x0"), d.get("xF"), dict(d.get("tolerances", {})))


def load_system(path, n_grid: Optional[int] = None) -> EnsembleSystem:
    """Read, validate and sample a system file; ``n_grid`` overrides the file's grid."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as err:
        raise SystemFileError(f"malformed JSON: {err.msg} (line {err.lineno}, column {err.colno})",
                              offset=err.pos) from None
    return system_from_dict(d, n_grid)
