"""Batch front end: scenario files in, delta curves out as CSV.

Usage::

    pkdp analyze scenario.json --out deltas.csv --engine exact --epsilons 0,0.5,1

Exit codes: 0 success, 1 usage or schema error, 2 engine infeasible,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import jsonschema

from pkdp.errors import DimensionMismatch, EngineInfeasible, InvariantViolation, ScenarioError
from pkdp.model import RecordAlphabet
from pkdp.scenarios import AnalysisSpec, ScenarioSpec
from pkdp.verifier import AttackerModel, TightDelta, delta_curve

CSV_HEADER = ["model", "theta", "zeta", "i", "a", "b", "bhat", "epsilon", "delta", "engine",
              "half_width", "seed"]
COMPARE_TOL = 1e-12

# --------------------------------------------------------------------------
# schema

_PROB = {
    "oneOf": [
        {"type": "number", "minimum": 0, "maximum": 1},
        {"type": "string", "pattern": r"^\s*(\d+\s*/\s*\d+|\d*\.?\d+)\s*$"},
    ]
}
_INDEX = {"type": "integer", "minimum": 0}
_RECORD = {"oneOf": [{"type": "string"}, _INDEX]}


def _typed(name: str, **props) -> dict:
    return {
        "type": "object",
        "properties": {"type": {"const": name}, **props},
        "required": ["type", *props],
        "additionalProperties": False,
    }


def _optional(schema: dict, **props) -> dict:
    schema["properties"].update(props)
    return schema


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["alphabet", "n", "distributions", "knowledge", "mechanism", "analysis"],
    "properties": {
        "alphabet": {"type": "array", "items": {"type": "string"}, "minItems": 1,
                     "uniqueItems": True},
        "n": {"type": "integer", "minimum": 1},
        "distributions": {
            "type": "array",
            "minItems": 1,
            "items": {"oneOf": [
                _typed("iid_bernoulli", p=_PROB),
                _typed("product_categorical",
                       probs={"type": "array", "items": {"type": "array", "items": _PROB}}),
                _typed("tabulated", table={"type": "array", "items": {
                    "type": "object",
                    "properties": {"db": {"type": "array", "items": _RECORD}, "p": _PROB},
                    "required": ["db", "p"],
                    "additionalProperties": False,
                }}),
            ]},
        },
        "knowledge": {
            "type": "array",
            "minItems": 1,
            "items": {"oneOf": [
                _typed("none"),
                _typed("prefix", k=_INDEX),
                _typed("subset", indices={"type": "array", "items": _INDEX, "uniqueItems": True}),
                _typed("all_but", index=_INDEX),
                _typed("identity"),
                _typed("independent_reveal", q=_PROB),
            ]},
        },
        "mechanism": {"oneOf": [
            _optional(_typed("thresholded_count", T={"type": "integer"}), positive=_RECORD),
            _optional(_typed("count"), positive=_RECORD),
            _optional(_typed("constant"), output={"type": ["integer", "string"]}),
            _typed("randomized_response", q=_PROB),
        ]},
        "targets": {"oneOf": [
            {"type": "array", "items": _INDEX, "minItems": 1, "uniqueItems": True},
            {"type": "object", "additionalProperties": False, "required": ["start", "stop"],
             "properties": {"start": _INDEX, "stop": _INDEX}},
        ]},
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "required": ["model", "epsilons", "engine"],
            "properties": {
                "model": {"enum": ["dp", "apk", "ppk", "compare"]},
                "epsilons": {"type": "array", "minItems": 1,
                             "items": {"type": "number", "minimum": 0}},
                "engine": {"enum": ["exact", "fastpath", "montecarlo"]},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "threshold_strict": {"type": "boolean"},
                "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
    },
}


def _locate(text: str, path: Sequence) -> int:
    """Best-effort line number of the JSON node at ``path``."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            hit = text.find(f'"{key}"', pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1


def _key_path(path: Sequence) -> str:
    out = "$"
    for key in path:
        out += f"[{key}]" if isinstance(key, int) else f".{key}"
    return out


def validate_document(doc, text: str = "") -> None:
    """Schema-check a decoded scenario document, raising ScenarioError."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = jsonschema.exceptions.best_match(errors)
    path = list(err.absolute_path)
    line = _locate(text, path) if text else None
    where = f"line {line}, " if line else ""
    raise ScenarioError(f"schema error at {where}{_key_path(path)}: {err.message}")


def _targets(value, n: int):
    if value is None:
        return None
    if isinstance(value, dict):
        if value["stop"] > n or value["start"] >= value["stop"]:
            raise DimensionMismatch(f"target range {value} invalid for n={n}")
        return tuple(range(value["start"], value["stop"]))
    return tuple(sorted(value))


def spec_from_document(doc: dict, text: str = "") -> ScenarioSpec:
    validate_document(doc, text)
    ana = doc["analysis"]
    spec = ScenarioSpec(
        alphabet=RecordAlphabet(tuple(doc["alphabet"])),
        n=doc["n"],
        distributions=doc["distributions"],
        knowledge=doc["knowledge"],
        mechanism=doc["mechanism"],
        analysis=AnalysisSpec(
            model=ana["model"],
            epsilons=[float(e) for e in ana["epsilons"]],
            engine=ana["engine"],
            samples=ana.get("samples"),
            seed=ana.get("seed"),
            threshold_strict=ana.get("threshold_strict", True),
            confidence=ana.get("confidence", 0.99),
        ),
    )
    try:
        spec.targets = _targets(doc.get("targets"), spec.n)
        spec.build()  # every dimension check lives in the constructors
    except DimensionMismatch as exc:
        raise ScenarioError(f"dimension error: {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"invalid parameter: {exc}") from exc
    if spec.analysis.engine == "montecarlo" and (spec.analysis.samples is None
                                                 or spec.analysis.seed is None):
        raise ScenarioError("schema error at $.analysis: engine 'montecarlo' needs samples and seed")
    return spec


def parse_scenario(path: str | Path) -> ScenarioSpec:
    """Read and validate a scenario file.

    Raises:
      ScenarioError: malformed JSON, schema violation or dimension mismatch.
    """
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    return spec_from_document(doc, text)


# --------------------------------------------------------------------------
# running


def _engine_options(spec: ScenarioSpec) -> dict:
    ana = spec.analysis
    if ana.engine == "montecarlo":
        return {"samples": ana.samples, "seed": ana.seed, "confidence": ana.confidence}
    return {}


def run_analysis(spec: ScenarioSpec, stream=None) -> list[TightDelta]:
    """Tight-delta curves for the requested model(s).

    With ``model="compare"`` both APK and PPK curves are returned; APK >= PPK
    is checked at every epsilon and the ratio APK/PPK is written to ``stream``.

    Raises:
      EngineInfeasible: the chosen engine cannot handle the instance.
      InvariantViolation: the APK curve falls below the PPK curve.
    """
    scenario = spec.build()
    ana = spec.analysis
    opts = _engine_options(spec)
    if ana.model != "compare":
        return delta_curve(ana.model, scenario, ana.epsilons, engine=ana.engine, **opts)
    apk = delta_curve("apk", scenario, ana.epsilons, engine=ana.engine, **opts)
    ppk = delta_curve("ppk", scenario, ana.epsilons, engine=ana.engine, **opts)
    for x, y in zip(apk, ppk):
        slack = COMPARE_TOL
        if ana.engine == "montecarlo":
            slack += (x.argmax.half_width or 0) + (y.argmax.half_width or 0)
        if x.delta < y.delta - slack:
            raise InvariantViolation(
                f"APK delta {float(x.delta):.17g} below PPK delta {float(y.delta):.17g} "
                f"at epsilon={x.epsilon}"
            )
        if stream is not None:
            ratio = float(x.delta) / float(y.delta) if y.delta > 0 else math.inf
            print(f"epsilon={x.epsilon:.17g} apk={float(x.delta):.17g} "
                  f"ppk={float(y.delta):.17g} ratio={ratio:.17g}", file=stream)
    return apk + ppk


# --------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, Fraction)):
        return format(float(x), ".17g")
    return str(x)


def csv_rows(results: Sequence[TightDelta]) -> list[list[str]]:
    ordered = sorted(results, key=lambda r: (r.model.value, r.epsilon, -float(r.delta)))
    rows = []
    for r in ordered:
        t = r.argmax
        rows.append([t.model.value, _fmt(t.theta), _fmt(t.zeta), _fmt(t.i), t.a, t.b,
                     _fmt(t.bhat), _fmt(r.epsilon), _fmt(r.delta), t.engine,
                     _fmt(t.half_width), _fmt(t.seed)])
    return rows


def emit_csv(results: Sequence[TightDelta], path) -> None:
    """Write results as CSV to ``path`` (a filename, or an open text stream)."""
    if not results:
        raise ValueError("no results to write")
    rows = csv_rows(results)

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(rows)

    if hasattr(path, "write"):
        write(path)
    else:
        with open(path, "w", newline="") as fh:
            write(fh)


# --------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _epsilons(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}")
    if not vals or any(math.isnan(v) or v < 0 for v in vals):
        raise argparse.ArgumentTypeError("epsilons must be a nonempty list of nonnegative reals")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pkdp", description="Tight delta curves under partial knowledge.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    an = sub.add_parser("analyze", help="run the analysis described by a scenario file")
    an.add_argument("file", type=Path)
    an.add_argument("--out", type=Path, help="CSV destination (default: stdout)")
    an.add_argument("--engine", choices=["exact", "fastpath", "montecarlo"])
    an.add_argument("--seed", type=int)
    an.add_argument("--samples", type=int)
    an.add_argument("--epsilons", type=_epsilons, help="comma-separated list")
    return parser


def _apply_overrides(spec: ScenarioSpec, args) -> None:
    for name in ("engine", "seed", "samples", "epsilons"):
        value = getattr(args, name)
        if value is not None:
            print(f"pkdp: override: analysis.{name} = {value!r} "
                  f"(file had {getattr(spec.analysis, name)!r})", file=sys.stderr)
            setattr(spec.analysis, name, value)
    if spec.analysis.engine == "montecarlo" and (spec.analysis.samples is None
                                                 or spec.analysis.seed is None):
        raise ScenarioError("engine 'montecarlo' needs samples and seed")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = parse_scenario(args.file)
        _apply_overrides(spec, args)
    except (OSError, ScenarioError) as exc:
        print(f"pkdp: {exc}", file=sys.stderr)
        return 1
    try:
        results = run_analysis(spec, stream=sys.stderr)
        emit_csv(results, args.out if args.out else sys.stdout)
    except EngineInfeasible as exc:
        print(f"pkdp: engine infeasible: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"pkdp: invariant violation: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"pkdp: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
