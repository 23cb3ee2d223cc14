"""Problem definition: input features, objectives, constraints, and tables.

Every model here is an immutable, JSON-ready pydantic class with a closed
schema (unknown fields rejected) and a ``type`` discriminator on union
members.  Values are safe to share between threads after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from kiln import expressions
from kiln.expressions import EvaluationError, ParseError

#: Default tolerance wherever a constraint tolerance is optional.
DEFAULT_TOL = 1e-6

#: |x| above this counts as "nonzero" for NChooseK constraints.  Continuous
#: optimizers leave ~1e-12 residue on zeroed features, so exact-zero tests
#: would be meaningless.
ZERO_EPS = 1e-8


class KilnModel(BaseModel):
    """Base for all serializable models: frozen, closed, finite floats."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


# ---------------------------------------------------------------------------
# input features
# ---------------------------------------------------------------------------


class ContinuousInput(KilnModel):
    type: Literal["ContinuousInput"] = "ContinuousInput"
    key: str = Field(min_length=1)
    bounds: tuple[float, float]
    unit: str | None = None

    @model_validator(mode="after")
    def _check_bounds(self) -> "ContinuousInput":
        lower, upper = self.bounds
        if not (lower < upper):
            raise ValueError(f"bounds must satisfy lower < upper, got [{lower}, {upper}]")
        return self

    @property
    def lower(self) -> float:
        return self.bounds[0]

    @property
    def upper(self) -> float:
        return self.bounds[1]


class DiscreteInput(KilnModel):
    type: Literal["DiscreteInput"] = "DiscreteInput"
    key: str = Field(min_length=1)
    values: tuple[float, ...] = Field(min_length=2)

    @model_validator(mode="after")
    def _check_values(self) -> "DiscreteInput":
        for a, b in zip(self.values, self.values[1:]):
            if not (a < b):
                raise ValueError("values must be strictly increasing")
        return self


class CategoricalInput(KilnModel):
    type: Literal["CategoricalInput"] = "CategoricalInput"
    key: str = Field(min_length=1)
    categories: tuple[str, ...] = Field(min_length=2)
    allowed: tuple[bool, ...] | None = None

    @model_validator(mode="after")
    def _check_categories(self) -> "CategoricalInput":
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("categories must be distinct")
        if any(not c for c in self.categories):
            raise ValueError("categories must be nonempty labels")
        if self.allowed is not None:
            if len(self.allowed) != len(self.categories):
                raise ValueError("allowed mask length must match categories")
            if not any(self.allowed):
                raise ValueError("at least one category must be allowed")
        return self

    @property
    def allowed_categories(self) -> tuple[str, ...]:
        if self.allowed is None:
            return self.categories
        return tuple(c for c, ok in zip(self.categories, self.allowed) if ok)


InputFeature = Annotated[
    Union[ContinuousInput, DiscreteInput, CategoricalInput],
    Field(discriminator="type"),
]


# ---------------------------------------------------------------------------
# objectives and outputs
# ---------------------------------------------------------------------------


class MaximizeObjective(KilnModel):
    type: Literal["MaximizeObjective"] = "MaximizeObjective"
    weight: float = Field(default=1.0, gt=0)


class MinimizeObjective(KilnModel):
    type: Literal["MinimizeObjective"] = "MinimizeObjective"
    weight: float = Field(default=1.0, gt=0)


class CloseToTargetObjective(KilnModel):
    type: Literal["CloseToTargetObjective"] = "CloseToTargetObjective"
    target_value: float
    exponent: float = Field(ge=1)
    weight: float = Field(default=1.0, gt=0)


class MaximizeSigmoidObjective(KilnModel):
    """Larger output is feasible; used as a learned black-box constraint."""

    type: Literal["MaximizeSigmoidObjective"] = "MaximizeSigmoidObjective"
    steepness: float = Field(gt=0)
    threshold: float


class MinimizeSigmoidObjective(KilnModel):
    type: Literal["MinimizeSigmoidObjective"] = "MinimizeSigmoidObjective"
    steepness: float = Field(gt=0)
    threshold: float


Objective = Annotated[
    Union[
        MaximizeObjective,
        MinimizeObjective,
        CloseToTargetObjective,
        MaximizeSigmoidObjective,
        MinimizeSigmoidObjective,
    ],
    Field(discriminator="type"),
]

SIGMOID_OBJECTIVES = (MaximizeSigmoidObjective, MinimizeSigmoidObjective)


class ContinuousOutput(KilnModel):
    type: Literal["ContinuousOutput"] = "ContinuousOutput"
    key: str = Field(min_length=1)
    objective: Objective


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------


class LinearEqualityConstraint(KilnModel):
    type: Literal["LinearEqualityConstraint"] = "LinearEqualityConstraint"
    features: tuple[str, ...] = Field(min_length=1)
    coefficients: tuple[float, ...]
    rhs: float

    @model_validator(mode="after")
    def _check_lengths(self) -> "LinearEqualityConstraint":
        if len(self.coefficients) != len(self.features):
            raise ValueError("coefficients length must match features length")
        return self


class LinearInequalityConstraint(KilnModel):
    """sum(c_i * x_i) <= rhs."""

    type: Literal["LinearInequalityConstraint"] = "LinearInequalityConstraint"
    features: tuple[str, ...] = Field(min_length=1)
    coefficients: tuple[float, ...]
    rhs: float

    @model_validator(mode="after")
    def _check_lengths(self) -> "LinearInequalityConstraint":
        if len(self.coefficients) != len(self.features):
            raise ValueError("coefficients length must match features length")
        return self


class NonlinearEqualityConstraint(KilnModel):
    """expression(x) = 0; expression in the kiln mini-language."""

    type: Literal["NonlinearEqualityConstraint"] = "NonlinearEqualityConstraint"
    expression: str

    @field_validator("expression")
    @classmethod
    def _canonical(cls, text: str) -> str:
        return expressions.canonicalize(text)


class NonlinearInequalityConstraint(KilnModel):
    """expression(x) <= 0; expression in the kiln mini-language."""

    type: Literal["NonlinearInequalityConstraint"] = "NonlinearInequalityConstraint"
    expression: str

    @field_validator("expression")
    @classmethod
    def _canonical(cls, text: str) -> str:
        return expressions.canonicalize(text)


class NChooseKConstraint(KilnModel):
    """Between min_count and max_count of the listed features are nonzero."""

    type: Literal["NChooseKConstraint"] = "NChooseKConstraint"
    features: tuple[str, ...] = Field(min_length=1)
    min_count: int = Field(ge=0)
    max_count: int
    none_also_valid: bool = False

    @model_validator(mode="after")
    def _check_counts(self) -> "NChooseKConstraint":
        if self.max_count < self.min_count:
            raise ValueError("max_count must be >= min_count")
        if self.max_count > len(self.features):
            raise ValueError("max_count exceeds the number of listed features")
        if len(set(self.features)) != len(self.features):
            raise ValueError("features must be distinct")
        return self


class InterpointEqualityConstraint(KilnModel):
    """The feature takes one common value across all rows of a batch."""

    type: Literal["InterpointEqualityConstraint"] = "InterpointEqualityConstraint"
    feature: str = Field(min_length=1)


Constraint = Annotated[
    Union[
        LinearEqualityConstraint,
        LinearInequalityConstraint,
        NonlinearEqualityConstraint,
        NonlinearInequalityConstraint,
        NChooseKConstraint,
        InterpointEqualityConstraint,
    ],
    Field(discriminator="type"),
]


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------


class Domain(KilnModel):
    inputs: tuple[InputFeature, ...] = Field(min_length=1)
    outputs: tuple[ContinuousOutput, ...] = Field(min_length=1)
    constraints: tuple[Constraint, ...] = ()

    def input_keys(self) -> list[str]:
        return [f.key for f in self.inputs]

    def output_keys(self) -> list[str]:
        return [o.key for o in self.outputs]

    def get_input(self, key: str) -> InputFeature:
        for f in self.inputs:
            if f.key == key:
                return f
        raise KeyError(key)

    def get_output(self, key: str) -> ContinuousOutput:
        for o in self.outputs:
            if o.key == key:
                return o
        raise KeyError(key)

    def continuous_keys(self) -> list[str]:
        return [f.key for f in self.inputs if isinstance(f, ContinuousInput)]


@dataclass(frozen=True)
class ValidationIssue:
    """One violation found during validation, with its location."""

    path: str
    message: str
    severity: str = "error"  # "error" | "warning"

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class DomainValidationError(ValueError):
    """Raised when validate_domain is asked to raise on a bad domain."""

    def __init__(self, issues: list[ValidationIssue]):
        super().__init__("; ".join(str(i) for i in issues))
        self.issues = issues


def validate_domain(domain: Domain, raise_on_error: bool = False) -> list[ValidationIssue]:
    """Cross-field validation of a structurally well-formed Domain.

    Field-level invariants (bound order, count ranges, ...) are enforced at
    construction; this adds the referential checks: key uniqueness, constraint
    features existing and continuous, expression identifiers resolving, at
    most one interpoint constraint per feature.  Returns every violation with
    a path like ``constraints[2].features[0]``.
    """
    issues: list[ValidationIssue] = []

    seen: dict[str, str] = {}
    for i, feature in enumerate(domain.inputs):
        if feature.key in seen:
            issues.append(ValidationIssue(f"inputs[{i}].key", f"duplicate key {feature.key!r}"))
        seen[feature.key] = f"inputs[{i}]"
    for i, output in enumerate(domain.outputs):
        if output.key in seen:
            issues.append(ValidationIssue(f"outputs[{i}].key", f"duplicate key {output.key!r}"))
        seen[output.key] = f"outputs[{i}]"

    continuous = set(domain.continuous_keys())
    known = {f.key for f in domain.inputs}

    def check_refs(path: str, keys: tuple[str, ...]) -> None:
        for j, key in enumerate(keys):
            if key not in known:
                issues.append(ValidationIssue(f"{path}[{j}]", f"unknown input key {key!r}"))
            elif key not in continuous:
                issues.append(
                    ValidationIssue(f"{path}[{j}]", f"feature {key!r} must be a continuous input")
                )

    interpoint_seen: set[str] = set()
    for i, constraint in enumerate(domain.constraints):
        path = f"constraints[{i}]"
        if isinstance(constraint, (LinearEqualityConstraint, LinearInequalityConstraint)):
            check_refs(f"{path}.features", constraint.features)
        elif isinstance(constraint, (NonlinearEqualityConstraint, NonlinearInequalityConstraint)):
            for name in sorted(expressions.expression_identifiers(constraint.expression)):
                if name not in known:
                    issues.append(
                        ValidationIssue(f"{path}.expression", f"unknown input key {name!r}")
                    )
                elif name not in continuous:
                    issues.append(
                        ValidationIssue(
                            f"{path}.expression", f"feature {name!r} must be a continuous input"
                        )
                    )
        elif isinstance(constraint, NChooseKConstraint):
            check_refs(f"{path}.features", constraint.features)
        elif isinstance(constraint, InterpointEqualityConstraint):
            check_refs(f"{path}.feature", (constraint.feature,))
            if constraint.feature in interpoint_seen:
                issues.append(
                    ValidationIssue(
                        f"{path}.feature",
                        f"multiple interpoint constraints on {constraint.feature!r}",
                    )
                )
            interpoint_seen.add(constraint.feature)

    if raise_on_error and issues:
        raise DomainValidationError(issues)
    return issues


# ---------------------------------------------------------------------------
# experiments and proposals
# ---------------------------------------------------------------------------


class ExperimentRow(KilnModel):
    """One experiment: settings per input key, measured values per output key.

    A missing output key means "not measured / invalid"; sentinel numbers are
    never used.
    """

    inputs: dict[str, float | str]
    outputs: dict[str, float] = {}


class ExperimentTable(KilnModel):
    rows: tuple[ExperimentRow, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    def concat(self, other: "ExperimentTable") -> "ExperimentTable":
        return ExperimentTable(rows=self.rows + other.rows)


class OutputPrediction(KilnModel):
    """Per-output prediction attached to a proposal; std present iff mean is."""

    mean: float | None = None
    std: float | None = None
    desirability: float | None = None

    @model_validator(mode="after")
    def _check_pairing(self) -> "OutputPrediction":
        if (self.mean is None) != (self.std is None):
            raise ValueError("std must be present exactly when mean is present")
        if self.std is not None and self.std < 0:
            raise ValueError("std must be >= 0")
        return self


class Proposal(KilnModel):
    inputs: dict[str, float | str]
    predictions: dict[str, OutputPrediction] = {}


class ProposalTable(KilnModel):
    rows: tuple[Proposal, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)


InputRow = dict[str, float | str]


def _validate_row_inputs(
    domain: Domain, row: InputRow, path: str, strict_bounds: bool
) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    for feature in domain.inputs:
        if feature.key not in row:
            issues.append(ValidationIssue(f"{path}.inputs", f"missing value for {feature.key!r}"))
            continue
        value = row[feature.key]
        vpath = f"{path}.inputs.{feature.key}"
        if isinstance(feature, ContinuousInput):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                issues.append(ValidationIssue(vpath, "expected a real value"))
            elif not math.isfinite(value):
                issues.append(ValidationIssue(vpath, "value must be finite"))
            elif not (feature.lower <= value <= feature.upper):
                issues.append(
                    ValidationIssue(
                        vpath,
                        f"value {value} outside bounds [{feature.lower}, {feature.upper}]",
                        severity="error" if strict_bounds else "warning",
                    )
                )
        elif isinstance(feature, DiscreteInput):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                issues.append(ValidationIssue(vpath, "expected a real value"))
            elif value not in feature.values:
                issues.append(ValidationIssue(vpath, f"value {value} not in the allowed value set"))
        else:
            if not isinstance(value, str):
                issues.append(ValidationIssue(vpath, "expected a category label"))
            elif value not in feature.allowed_categories:
                issues.append(ValidationIssue(vpath, f"label {value!r} not among allowed categories"))
    known = {f.key for f in domain.inputs}
    for key in row:
        if key not in known:
            issues.append(ValidationIssue(f"{path}.inputs.{key}", f"unknown input key {key!r}"))
    return issues


def validate_experiments(domain: Domain, table: ExperimentTable) -> list[ValidationIssue]:
    """Validate measured data against a domain.

    Out-of-bounds continuous settings are warnings (lab data is historical
    fact, often predating the domain definition); everything else that does
    not fit the domain is an error.
    """
    issues: list[ValidationIssue] = []
    output_keys = set(domain.output_keys())
    for i, row in enumerate(table.rows):
        path = f"rows[{i}]"
        issues.extend(_validate_row_inputs(domain, row.inputs, path, strict_bounds=False))
        for key, value in row.outputs.items():
            if key not in output_keys:
                issues.append(ValidationIssue(f"{path}.outputs.{key}", f"unknown output key {key!r}"))
            elif not math.isfinite(value):
                issues.append(ValidationIssue(f"{path}.outputs.{key}", "measured value must be finite"))
    return issues


def validate_proposals(
    domain: Domain, proposals: ProposalTable, tol: float = DEFAULT_TOL
) -> list[ValidationIssue]:
    """Validate proposed candidates: hard errors on bound violations.

    Unlike experiments, proposals were generated by us, so every input must
    lie inside the domain and the batch must satisfy every constraint.
    """
    issues: list[ValidationIssue] = []
    output_keys = set(domain.output_keys())
    for i, proposal in enumerate(proposals.rows):
        path = f"rows[{i}]"
        issues.extend(_validate_row_inputs(domain, proposal.inputs, path, strict_bounds=True))
        for key in proposal.predictions:
            if key not in output_keys:
                issues.append(
                    ValidationIssue(f"{path}.predictions.{key}", f"unknown output key {key!r}")
                )
    if issues:
        return issues
    rows = [p.inputs for p in proposals.rows]
    if rows:
        for i, constraint in enumerate(domain.constraints):
            result = check_constraint(constraint, rows, tol=tol)
            if not result.satisfied:
                issues.append(
                    ValidationIssue(
                        f"constraints[{i}]",
                        f"{constraint.type} violated (magnitude {max(result.violations):.3g})",
                    )
                )
    return issues


# ---------------------------------------------------------------------------
# constraint checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintResult:
    """Outcome of checking one constraint against a batch of rows.

    ``violations`` has one entry per row, except for interpoint constraints
    where the batch yields a single magnitude.  A magnitude of 0 means
    satisfied.
    """

    satisfied: bool
    violations: tuple[float, ...]


def check_constraint(
    constraint: Constraint, rows: list[InputRow], tol: float = DEFAULT_TOL
) -> ConstraintResult:
    """Check one constraint against one or more input rows.

    Violation magnitudes are the amount by which the row exceeds the allowed
    region beyond ``tol`` (continuous in the row values for linear and
    nonlinear constraints); NChooseK reports the integer count excess.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if isinstance(constraint, InterpointEqualityConstraint):
        values = [float(row[constraint.feature]) for row in rows]
        spread = max(values) - min(values) if values else 0.0
        violation = max(0.0, spread - tol)
        return ConstraintResult(violation == 0.0, (violation,))

    violations: list[float] = []
    for row in rows:
        if isinstance(constraint, (LinearEqualityConstraint, LinearInequalityConstraint)):
            total = sum(
                c * float(row[f]) for c, f in zip(constraint.coefficients, constraint.features)
            )
            if isinstance(constraint, LinearEqualityConstraint):
                excess = abs(total - constraint.rhs)
            else:
                excess = total - constraint.rhs
            violations.append(max(0.0, excess - tol))
        elif isinstance(constraint, (NonlinearEqualityConstraint, NonlinearInequalityConstraint)):
            names = expressions.expression_identifiers(constraint.expression)
            env = {name: float(row[name]) for name in names}
            value = expressions.evaluate_expression(constraint.expression, env)
            if isinstance(constraint, NonlinearEqualityConstraint):
                excess = abs(value)
            else:
                excess = value
            violations.append(max(0.0, excess - tol))
        elif isinstance(constraint, NChooseKConstraint):
            count = sum(1 for f in constraint.features if abs(float(row[f])) > ZERO_EPS)
            if count == 0 and constraint.none_also_valid:
                violations.append(0.0)
            else:
                excess = max(count - constraint.max_count, constraint.min_count - count, 0)
                violations.append(float(excess))
        else:
            raise TypeError(f"unknown constraint {constraint!r}")
    return ConstraintResult(all(v == 0.0 for v in violations), tuple(violations))


def check_all_constraints(
    domain: Domain, rows: list[InputRow], tol: float = DEFAULT_TOL
) -> bool:
    """True iff the batch satisfies every constraint of the domain."""
    return all(check_constraint(c, rows, tol=tol).satisfied for c in domain.constraints)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


def evaluate_objective(objective, y: float) -> float:
    """Map a measured output value to a desirability (larger is better)."""
    if isinstance(objective, MaximizeObjective):
        return objective.weight * y
    if isinstance(objective, MinimizeObjective):
        return -objective.weight * y
    if isinstance(objective, CloseToTargetObjective):
        return -objective.weight * abs(y - objective.target_value) ** objective.exponent
    if isinstance(objective, MaximizeSigmoidObjective):
        return _sigmoid(objective.steepness * (y - objective.threshold))
    if isinstance(objective, MinimizeSigmoidObjective):
        return _sigmoid(-objective.steepness * (y - objective.threshold))
    raise TypeError(f"unknown objective {objective!r}")


def _sigmoid(t: float) -> float:
    # guard against overflow in exp for very negative arguments
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def scalarize_apriori(
    desirabilities: np.ndarray | list[float],
    weights: np.ndarray | list[float],
    mode: str = "additive",
) -> float:
    """Combine per-objective desirabilities into one a-priori score.

    additive: sum(w_i * g_i); multiplicative: prod(g_i ** w_i).  The
    multiplicative mode requires strictly positive desirabilities; no
    automatic shifting is applied because silent shifting changes optima.
    """
    g = np.asarray(desirabilities, dtype=float)
    w = np.asarray(weights, dtype=float)
    if g.shape != w.shape or g.ndim != 1 or g.size < 1:
        raise ValueError("desirabilities and weights must be equal-length vectors")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if mode == "additive":
        return float(np.dot(w, g))
    if mode == "multiplicative":
        if np.any(g <= 0):
            raise ValueError(
                "multiplicative scalarization requires positive desirabilities; "
                "map values into (0, 1] first"
            )
        return float(np.prod(g**w))
    raise ValueError(f"unknown mode {mode!r}")
