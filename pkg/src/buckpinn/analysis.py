"""Generalisation bound arithmetic: model complexity, Hoeffding epsilon, and the gap audit."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

from .errors import ValidationError
from .net import param_count


def model_complexity(layer_sizes) -> int:
    """Trainable parameter count, weights plus biases, used as |H|."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValidationError("need at least two positive layer sizes")
    return param_count(sizes)


def hoeffding_bound(H: int, m: int, delta: float) -> float:
    """sqrt((ln|H| + ln(2/delta)) / (2m)), as a fraction (0.0199 means 1.99%)."""
    if H < 1:
        raise ValidationError("|H| must be >= 1")
    if m < 1:
        raise ValidationError("m must be >= 1")
    if not (0.0 < delta < 1.0):
        raise ValidationError("delta must lie in (0, 1)")
    return math.sqrt((math.log(H) + math.log(2.0 / delta)) / (2.0 * m))


@dataclass(frozen=True)
class GapReport:
    R_test: float
    R_emp: float
    bound: float
    E_gen: float
    passed: bool

    def lines(self) -> list[str]:
        return [
            f"R_test  = {100 * self.R_test:.4g}%",
            f"R_emp   = {100 * self.R_emp:.4g}%",
            f"epsilon = {100 * self.bound:.4g}%",
            f"E_gen   = {100 * self.E_gen:.4g}%",
            f"R_test <= R_emp + epsilon: {'PASS' if self.passed else 'FAIL'}",
        ]


def gap_audit(R_test: float, R_emp: float, bound: float) -> GapReport:
    """E_gen = R_test - R_emp and whether R_test <= R_emp + bound (all as fractions)."""
    if min(R_test, R_emp, bound) < 0:
        raise ValidationError("errors and bound must be nonnegative")
    return GapReport(R_test, R_emp, bound, R_test - R_emp, R_test <= R_emp + bound)


@dataclass(frozen=True)
class BoundReport:
    layer_sizes: tuple[int, ...]
    H: int
    m: int
    delta: float
    epsilon: float
    gap: GapReport | None = None

    def text(self) -> str:
        out = [f"layer sizes = {list(self.layer_sizes)}", f"|H| = {self.H}", f"m = {self.m}",
               f"delta = {self.delta:g}", f"epsilon = {self.epsilon:.6f} ({100 * self.epsilon:.2f}%)"]
        if self.gap is not None:
            out += self.gap.lines()
        return "\n".join(out)

    def csv_row(self, header: bool = True) -> str:
        cols = ["H", "m", "delta", "epsilon", "R_test", "R_emp", "E_gen", "pass"]
        g = self.gap
        row = [self.H, self.m, repr(self.delta), repr(self.epsilon),
               "" if g is None else repr(g.R_test), "" if g is None else repr(g.R_emp),
               "" if g is None else repr(g.E_gen), "" if g is None else int(g.passed)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(cols)
        w.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(layer_sizes, m: int, delta: float = 0.05, R_test: float | None = None,
                 R_emp: float | None = None) -> BoundReport:
    H = model_complexity(layer_sizes)
    eps = hoeffding_bound(H, m, delta)
    gap = None
    if R_test is not None and R_emp is not None:
        gap = gap_audit(R_test, R_emp, eps)
    return BoundReport(tuple(int(s) for s in layer_sizes), H, int(m), float(delta), eps, gap)
