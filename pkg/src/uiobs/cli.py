"""Spec-file ingestion, pipeline selection, and report emission.

A system lives in a single JSON document (see ``load_spec``).  ``run``
picks the analysis path: the original-space recursion when there is
exactly one unknown input, the extension-based rank test otherwise.  The
same facts are rendered as human-readable text or as a stable JSON
document; identical inputs (including the seed) produce byte-identical
structured reports.

Exit codes: 0 completed analysis (observable or not), 2 spec/config
error, 3 sampling exhausted (singular box), 4 convergence not certified,
5 outside the method's scope (no finite relative degree).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

from . import extension, single_disturbance
from .expressions import ExprError
from .extension import OBSERVABLE, SystemSpec, rank_condition_report
from .geometry import SamplePlan, SamplingExhausted
from .single_disturbance import (
    NOT_HANDLED,
    AnalysisError,
    CoordinateChangeSpec,
    analyze,
    check_bracket_identities,
    check_separation,
)

__all__ = ["SpecFileError", "RunConfig", "Report", "load_spec", "run", "main"]

EXIT_OK = 0
EXIT_SPEC_ERROR = 2
EXIT_SAMPLING = 3
EXIT_NOT_CERTIFIED = 4
EXIT_NOT_HANDLED = 5

SCHEMA = "uiobs-report/1"


class SpecFileError(Exception):
    """Spec file missing, malformed, or inconsistent."""


def _expect(document, key, kind, where):
    if key not in document:
        raise SpecFileError(f"{where}: missing required field '{key}'")
    value = document[key]
    if not isinstance(value, kind):
        raise SpecFileError(f"{where}: field '{key}' has the wrong type")
    return value


def _field_list(raw, n, label):
    if not isinstance(raw, list):
        raise SpecFileError(f"{label} must be a list of expression lists")
    fields = []
    for i, entries in enumerate(raw):
        if not isinstance(entries, list) or len(entries) != n:
            raise SpecFileError(f"{label}[{i}] must list exactly {n} expressions")
        if not all(isinstance(e, str) for e in entries):
            raise SpecFileError(f"{label}[{i}] entries must be strings")
        fields.append(entries)
    return fields


def load_spec(path):
    """Read and validate a system spec file.

    Format (JSON object): ``states`` (list of names), ``x0`` (list of
    numbers), ``outputs`` (list of expressions), and optionally ``f0``
    (drift expressions), ``f`` (list of known-input fields), ``g`` (list
    of unknown-input fields) and ``coordinate_change`` with ``Q`` /
    ``Q_inverse`` expression lists (the inverse is written over the primed
    names x1', x2', ...).

    Returns ``(SystemSpec, CoordinateChangeSpec or None)``.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as err:
        raise SpecFileError(f"cannot read spec file: {err}") from err
    except json.JSONDecodeError as err:
        raise SpecFileError(f"spec file is not valid JSON: {err}") from err
    if not isinstance(document, dict):
        raise SpecFileError("spec file must hold a JSON object")

    states = _expect(document, "states", list, "spec")
    n = len(states)
    x0 = _expect(document, "x0", list, "spec")
    outputs = _expect(document, "outputs", list, "spec")
    if len(x0) != n:
        raise SpecFileError(f"x0 has {len(x0)} entries, expected {n}")
    if not outputs:
        raise SpecFileError("at least one output expression is required")

    drift = document.get("f0")
    if drift is not None and (not isinstance(drift, list) or len(drift) != n):
        raise SpecFileError(f"f0 must list exactly {n} expressions")
    known = _field_list(document.get("f", []), n, "f")
    unknown = _field_list(document.get("g", []), n, "g")

    try:
        sys_spec = SystemSpec.from_strings(
            states=states,
            outputs=outputs,
            x0=[float(v) for v in x0],
            drift=drift,
            known=known,
            unknown=unknown,
        )
    except (ExprError, ValueError, TypeError) as err:
        raise SpecFileError(f"spec validation failed: {err}") from err

    change = None
    raw_change = document.get("coordinate_change")
    if raw_change is not None:
        if not isinstance(raw_change, dict):
            raise SpecFileError("coordinate_change must be an object with Q and Q_inverse")
        forward = _expect(raw_change, "Q", list, "coordinate_change")
        inverse = _expect(raw_change, "Q_inverse", list, "coordinate_change")
        if len(forward) != n or len(inverse) != n:
            raise SpecFileError(f"coordinate_change maps must list exactly {n} expressions")
        try:
            change = CoordinateChangeSpec.from_strings(
                sys_spec.space, forward, inverse, raw_change.get("new_states")
            )
        except (ExprError, ValueError) as err:
            raise SpecFileError(f"coordinate_change validation failed: {err}") from err

    return sys_spec, change


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation's worth of knobs."""

    spec_path: str
    mode: str = "auto"
    k: int = 2
    max_m: int | None = None
    seed: int = 42
    samples: int = 7
    tolerance: float = 1e-8
    half_width: float = 0.3
    output_format: str = "text"
    verify: bool = False

    def __post_init__(self):
        if self.mode not in ("auto", "eorc", "single"):
            raise SpecFileError(f"unknown mode '{self.mode}'")
        if self.output_format not in ("text", "json"):
            raise SpecFileError(f"unknown format '{self.output_format}'")
        if self.k < 0 or self.samples < 1 or self.tolerance <= 0 or self.half_width <= 0:
            raise SpecFileError("numeric overrides must be positive")
        if self.max_m is not None and self.max_m < 0:
            raise SpecFileError("max-m must be nonnegative")


@dataclass
class Report:
    """Everything a run produced, in one JSON-ready dictionary."""

    document: dict

    @property
    def exit_code(self):
        return self.document["exit_code"]

    def to_json(self):
        return json.dumps(self.document, indent=2, sort_keys=True) + "\n"

    def to_text(self):
        doc = self.document
        lines = []
        spec = doc["spec"]
        lines.append(f"spec: {spec['path']}")
        lines.append(
            "states: "
            + ", ".join(spec["states"])
            + f"   (n={spec['n']}, known inputs={spec['m_u']}, unknown inputs={spec['m_w']})"
        )
        lines.append("outputs: " + ", ".join(spec["outputs"]))
        lines.append(f"base point: {spec['x0']}")
        config = doc["config"]
        lines.append(
            f"path: {doc['path']}   (mode={config['mode']}, seed={config['seed']}, "
            f"samples={config['samples']}, tolerance={config['tolerance']}, "
            f"half-width={config['half_width']})"
        )
        result = doc["result"]
        lines.append(f"status: {result['status']}")
        if result.get("certification") is not None:
            lines.append(f"certified by: {result['certification']}")
        if doc["path"] == "single":
            lines.append(
                f"m' = {result['m_prime']}   m* = {result['m_star']}   "
                f"rank = {result['rank']}"
            )
            lines.append(f"ranks by depth: {result['ranks_by_depth']}")
        else:
            for entry in result["orders"]:
                lines.append(
                    f"extension order {entry['order']}: derivative order {entry['max_derivative_order']}, "
                    f"extended dimension {entry['extended_dimension']}, ranks {entry['ranks']}"
                )
        lines.append("components:")
        for comp in result["components"]:
            lines.append(f"  {comp['name']}: {comp['verdict']}   ({comp['justification']})")
        diagnostics = result.get("diagnostics")
        if diagnostics:
            lines.append("diagnostics:")
            for key in sorted(diagnostics):
                lines.append(f"  {key}: {diagnostics[key]}")
        checks = doc.get("checks")
        if checks:
            lines.append("checks:")
            separation = checks.get("separation")
            if separation is not None:
                for entry in separation:
                    lines.append(
                        f"  separation order {entry['order']}: equal={entry['equal']} "
                        f"(rank full={entry['rank_full']}, split={entry['rank_split']})"
                    )
            identities = checks.get("identities")
            if identities is not None:
                lines.append(
                    "  bracket identity residuals: "
                    + json.dumps(identities["bracket_residuals"], sort_keys=True)
                )
                lines.append(
                    "  ratio identity residuals: "
                    + json.dumps(identities["ratio_residuals"], sort_keys=True)
                )
        lines.append(f"exit code: {doc['exit_code']}")
        return "\n".join(lines) + "\n"


def _component_dicts(components):
    return [
        {"name": c.name, "verdict": c.verdict, "justification": c.justification}
        for c in components
    ]


def _single_result(result):
    return {
        "status": result.status,
        "certification": result.certification,
        "m_prime": result.m_prime,
        "m_star": result.m_star,
        "rank": result.rank,
        "ranks_by_depth": list(result.ranks),
        "components": _component_dicts(result.components),
        "diagnostics": result.diagnostics,
    }


def _eorc_result(reports, k_cap):
    orders = []
    best = {}
    for rep in reports:
        orders.append(
            {
                "order": rep.order,
                "max_derivative_order": rep.max_derivative_order,
                "extended_dimension": rep.extended_dimension,
                "ranks": list(rep.ranks),
                "components": _component_dicts(rep.components),
                "samples_rejected": rep.samples_rejected,
            }
        )
        for comp in rep.components:
            if comp.name not in best or (
                comp.verdict == OBSERVABLE and best[comp.name].verdict != OBSERVABLE
            ):
                best[comp.name] = comp
    components = [best[c.name] for c in reports[-1].components]
    all_observable = all(c.verdict == OBSERVABLE for c in components)
    status = OBSERVABLE if all_observable else "undecided"
    return {
        "status": status,
        "certification": "extended-rank-condition" if all_observable else None,
        "k_cap": k_cap,
        "orders": orders,
        "components": _component_dicts(components),
        "diagnostics": {"note": "the extension test is sufficient only"},
    }


def run(config):
    """Execute one analysis and build the report."""
    sys_spec, change = load_spec(config.spec_path)
    if config.mode == "single" and sys_spec.m_w != 1:
        raise SpecFileError("mode 'single' requires exactly one unknown input")
    path = config.mode
    if path == "auto":
        path = "single" if sys_spec.m_w == 1 else "eorc"

    plan = SamplePlan.around(
        sys_spec.x0,
        half_width=config.half_width,
        seed=config.seed,
        samples=config.samples,
        tolerance=config.tolerance,
    )

    checks = None
    if path == "single":
        result = analyze(sys_spec, plan, change=change, max_m=config.max_m)
        result_doc = _single_result(result)
        if result.status == NOT_HANDLED:
            exit_code = EXIT_NOT_HANDLED
        elif result.status == "undecided":
            exit_code = EXIT_NOT_CERTIFIED
        else:
            exit_code = EXIT_OK
        if config.verify:
            checks = _verification_checks(sys_spec, change, plan)
    else:
        reports = []
        for k in range(config.k + 1):
            rep = rank_condition_report(sys_spec, k, plan)
            reports.append(rep)
            if rep.all_observable:
                break
        result_doc = _eorc_result(reports, config.k)
        exit_code = EXIT_OK if result_doc["status"] == OBSERVABLE else EXIT_NOT_CERTIFIED
        if config.verify:
            checks = {"note": "verification checks apply to the single-disturbance path only"}

    document = {
        "schema": SCHEMA,
        "spec": {
            "path": config.spec_path,
            "states": list(sys_spec.space.names),
            "n": sys_spec.n,
            "m_u": sys_spec.m_u,
            "m_w": sys_spec.m_w,
            "outputs": [repr_text for repr_text in _output_texts(sys_spec)],
            "x0": list(sys_spec.x0),
        },
        "config": {
            "mode": config.mode,
            "k": config.k,
            "max_m": config.max_m,
            "seed": config.seed,
            "samples": config.samples,
            "tolerance": config.tolerance,
            "half_width": config.half_width,
            "verify": config.verify,
        },
        "path": path,
        "result": result_doc,
        "checks": checks,
        "exit_code": None,
    }
    document["exit_code"] = exit_code
    return Report(document)


def _output_texts(sys_spec):
    from .expressions import to_text

    return [to_text(h, sys_spec.space) for h in sys_spec.outputs]


def _verification_checks(sys_spec, change, plan):
    """Run the separation and identity oracles for the report."""
    work = sys_spec
    output = None
    if change is not None:
        transformed = single_disturbance.apply_coordinate_change(sys_spec, change, plan)
        if transformed.degree > 1:
            work = transformed.system
            output = transformed.machinery_output
    separation = []
    for m in range(1, 5):
        check = check_separation(work, m, plan.rebased(work.x0), output=output)
        separation.append(
            {
                "order": check.order,
                "equal": check.equal,
                "rank_full": check.rank_full,
                "rank_split": check.rank_split,
            }
        )
    identities = check_bracket_identities(work, 4, plan.rebased(work.x0), output=output)
    return {
        "separation": separation,
        "identities": {
            "bracket_residuals": {str(k): v for k, v in identities.bracket_residuals.items()},
            "ratio_residuals": {str(k): v for k, v in identities.ratio_residuals.items()},
        },
    }


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="uiobs",
        description=(
            "Decide weak local observability of a control-affine system with "
            "known and unknown inputs, from a JSON system spec."
        ),
    )
    parser.add_argument("spec", help="path to the JSON system spec")
    parser.add_argument("--mode", choices=("auto", "eorc", "single"), default="auto")
    parser.add_argument("--k", type=int, default=2, help="extension order cap for the rank test")
    parser.add_argument("--max-m", type=int, default=None, help="override the recursion depth cap")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--samples", type=int, default=7)
    parser.add_argument("--tol", type=float, default=1e-8, help="rank decision tolerance")
    parser.add_argument("--box", type=float, default=0.3, help="sampling half-width per variable")
    parser.add_argument("--format", choices=("text", "json"), default="text")
    parser.add_argument(
        "--verify",
        action="store_true",
        help="also run the separation and identity oracles and embed the residuals",
    )
    args = parser.parse_args(argv)

    try:
        config = RunConfig(
            spec_path=args.spec,
            mode=args.mode,
            k=args.k,
            max_m=args.max_m,
            seed=args.seed,
            samples=args.samples,
            tolerance=args.tol,
            half_width=args.box,
            output_format=args.format,
            verify=args.verify,
        )
        report = run(config)
    except SpecFileError as err:
        print(f"spec error: {err}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except SamplingExhausted as err:
        print(f"sampling error: {err}", file=sys.stderr)
        return EXIT_SAMPLING
    except single_disturbance.CoordinateChangeRequiredError as err:
        print(f"spec error: {err}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except single_disturbance.CoordinateChangeError as err:
        print(f"spec error: {err}", file=sys.stderr)
        return EXIT_SPEC_ERROR
    except AnalysisError as err:
        print(f"analysis error: {err}", file=sys.stderr)
        return EXIT_NOT_HANDLED

    if config.output_format == "json":
        sys.stdout.write(report.to_json())
    else:
        sys.stdout.write(report.to_text())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
