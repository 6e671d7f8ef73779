"""Closed arithmetic grammar for compensation checks.

Formulas may use numeric literals, field references, ``+ - * /``, unary
minus, parentheses and ``min(...)`` / ``max(...)``. Evaluation is exact over
rationals; money is integer cents, rounded half-up once at the end.
Nothing else is executed.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

_MAX_FORMULA_LEN = 2000


class FormulaError(ValueError):
    pass


def to_fraction(value: Any) -> Fraction:
    if isinstance(value, bool):
        raise FormulaError("booleans are not numbers")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, (str, Decimal)):
        try:
            return Fraction(str(value).replace(",", "").strip())
        except (ValueError, ZeroDivisionError):
            raise FormulaError(f"not a number: {value!r}") from None
    raise FormulaError(f"not a number: {value!r}")


def evaluate(formula: str, variables: Mapping[str, Any] | None = None) -> Fraction:
    """Evaluate ``formula`` exactly. Raises FormulaError on anything outside the grammar."""
    if not isinstance(formula, str) or not formula.strip():
        raise FormulaError("empty formula")
    if len(formula) > _MAX_FORMULA_LEN:
        raise FormulaError("formula too long")
    try:
        tree = ast.parse(formula.strip(), mode="eval")
    except SyntaxError as exc:
        raise FormulaError(f"syntax error: {exc.msg}") from None
    return _eval(tree.body, variables or {})


def _eval(node: ast.AST, env: Mapping[str, Any]) -> Fraction:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return to_fraction(node.value)
        raise FormulaError(f"unsupported literal {node.value!r}")
    if isinstance(node, ast.Name):
        if node.id not in env:
            raise FormulaError(f"unknown field {node.id!r}")
        return to_fraction(env[node.id])
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        left, right = _eval(node.left, env), _eval(node.right, env)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if right == 0:
                raise FormulaError("division by zero")
            return left / right
        raise FormulaError(f"operator {type(node.op).__name__} not allowed")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in ("min", "max"):
            raise FormulaError("only min() and max() may be called")
        if node.keywords or not node.args:
            raise FormulaError(f"{node.func.id}() takes one or more positional arguments")
        args = [_eval(a, env) for a in node.args]
        return min(args) if node.func.id == "min" else max(args)
    raise FormulaError(f"{type(node).__name__} not allowed in formulas")


def round_half_up(value: Fraction) -> int:
    sign = -1 if value < 0 else 1
    a = abs(value)
    return sign * int((a + Fraction(1, 2)) // 1)


def to_cents(value: Any) -> int:
    """Money amount (units, e.g. dollars) to integer cents, half-up."""
    return round_half_up(to_fraction(value) * 100)


def format_money(cents: int) -> str:
    sign = "-" if cents < 0 else ""
    whole, frac = divmod(abs(cents), 100)
    return f"{sign}{whole}" if frac == 0 else f"{sign}{whole}.{frac:02d}"


def parse_money(value: Any) -> int:
    if isinstance(value, str):
        value = value.replace("$", "").replace(",", "").strip()
        try:
            value = Decimal(value)
        except InvalidOperation:
            raise FormulaError(f"not a money amount: {value!r}") from None
    return to_cents(value)


@dataclass(frozen=True)
class CompensationComponent:
    label: str
    amount: int  # cents
    formula: str = ""
    statute_ref: str = ""

    def __post_init__(self) -> None:
        if self.amount < 0:
            raise ValueError(f"component {self.label!r} has a negative amount")


@dataclass(frozen=True)
class CompensationBreakdown:
    components: tuple[CompensationComponent, ...]
    variables: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.components, tuple):
            object.__setattr__(self, "components", tuple(self.components))

    @property
    def total(self) -> int:
        return sum(c.amount for c in self.components)

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]],
                     variables: Mapping[str, Any] | None = None) -> "CompensationBreakdown":
        comps = []
        for rec in records:
            comps.append(CompensationComponent(
                label=str(rec.get("label", "")),
                amount=parse_money(rec.get("amount", 0)),
                formula=str(rec.get("formula") or ""),
                statute_ref=str(rec.get("statute_ref") or ""),
            ))
        return cls(tuple(comps), dict(variables or {}))


@dataclass(frozen=True)
class StatutoryCap:
    statute_ref: str
    cap: int  # cents


@dataclass(frozen=True)
class Violation:
    kind: str  # value-mismatch | cap-exceeded | unparseable formula | total-mismatch
    component: str
    stated: int | None = None
    expected: int | None = None
    cap: int | None = None
    statute_ref: str = ""
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "component": self.component,
            "stated": None if self.stated is None else format_money(self.stated),
            "expected": None if self.expected is None else format_money(self.expected),
            "cap": None if self.cap is None else format_money(self.cap),
            "statute_ref": self.statute_ref,
            "message": self.message,
        }


def check_compensation(breakdown: CompensationBreakdown,
                       limits: Sequence[StatutoryCap] = ()) -> list[Violation]:
    caps: dict[str, int] = {}
    for lim in limits:
        caps[lim.statute_ref] = min(lim.cap, caps.get(lim.statute_ref, lim.cap))
    violations = []
    for comp in breakdown.components:
        if comp.formula:
            try:
                expected = to_cents(evaluate(comp.formula, breakdown.variables))
            except FormulaError as exc:
                violations.append(Violation("unparseable formula", comp.label, stated=comp.amount,
                                            statute_ref=comp.statute_ref,
                                            message=f"{comp.formula!r}: {exc}"))
            else:
                if expected != comp.amount:
                    violations.append(Violation(
                        "value-mismatch", comp.label, stated=comp.amount, expected=expected,
                        statute_ref=comp.statute_ref,
                        message=f"{comp.formula} = {format_money(expected)}, "
                                f"stated {format_money(comp.amount)}",
                    ))
        cap = caps.get(comp.statute_ref) if comp.statute_ref else None
        if cap is not None and comp.amount > cap:
            violations.append(Violation(
                "cap-exceeded", comp.label, stated=comp.amount, cap=cap,
                statute_ref=comp.statute_ref,
                message=f"{format_money(comp.amount)} exceeds the {comp.statute_ref} cap "
                        f"of {format_money(cap)}",
            ))
    return violations


def check_total(breakdown: CompensationBreakdown, stated_total: int) -> Violation | None:
    if breakdown.total == stated_total:
        return None
    return Violation("total-mismatch", "total", stated=stated_total, expected=breakdown.total,
                     message=f"components sum to {format_money(breakdown.total)}, "
                             f"stated total {format_money(stated_total)}")
