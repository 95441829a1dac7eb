"""Reference minimizer, suboptimality traces and classification scores."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .objective import FiniteSum, LabeledDataset, RidgeLogistic
from .optimizers import OptimizerConfig, TraceRecord, run

__all__ = [
    "ReferenceSolution",
    "SolverError",
    "solve_reference",
    "F1Result",
    "f1",
    "one_vs_all_predict",
    "per_digit_f1",
    "fit_one_vs_all",
    "traces_to_csv",
    "mean_contraction",
]

NEWTON_MAX_DIM = 1000


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReferenceSolution:
    w: np.ndarray
    f: float
    grad_norm: float
    iterations: int


def solve_reference(obj: FiniteSum, tol: float = 1e-10, max_iter: int = 200_000, w0=None) -> ReferenceSolution:
    """High-accuracy minimizer used as the oracle for suboptimality.

    Damped Newton with backtracking when the objective exposes a dense
    Hessian and d <= 1000; otherwise gradient descent with step 1/L.
    Stops once ||g(w)|| <= tol.
    """
    w = np.zeros(obj.dim) if w0 is None else np.array(w0, dtype=np.float64)
    g = obj.grad_full(w)
    use_newton = hasattr(obj, "hessian") and obj.dim <= NEWTON_MAX_DIM
    step = 1.0 / obj.smoothness_bound()
    f = obj.loss(w)
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return ReferenceSolution(w, f, gn, it)
        if use_newton:
            direction = -np.linalg.solve(obj.hessian(w), g)
            t = 1.0
            slope = float(g @ direction)
            while True:
                w_new = w + t * direction
                f_new = obj.loss(w_new)
                if f_new <= f + 1e-4 * t * slope or t < 1e-10:
                    break
                t *= 0.5
            if t < 1e-10:
                # at the floating-point floor: a full Newton step still reduces ||g||
                w_new = w + direction
                f_new = obj.loss(w_new)
            w, f = w_new, f_new
        else:
            w = w - step * g
            f = obj.loss(w)
        g = obj.grad_full(w)
    raise SolverError(f"no convergence after {max_iter} iterations; ||g|| = {np.linalg.norm(g):.3e}")


@dataclass(frozen=True)
class F1Result:
    f1: float
    precision: float
    recall: float
    undefined: bool = False

    def __float__(self):
        return self.f1


def f1(pred, truth) -> F1Result:
    """F1 of the +1 class; 0 (flagged undefined) when P + R has no support."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth != 1)))
    fn = int(np.sum((pred != 1) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return F1Result(0.0, precision, recall, undefined=True)
    return F1Result(2 * precision * recall / (precision + recall), precision, recall)


def one_vs_all_predict(classifiers, x) -> np.ndarray:
    """argmax_l w_l^T x; ``np.argmax`` picks the smallest digit on ties."""
    W = np.asarray(classifiers, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    scores = x @ W.T
    return np.argmax(scores, axis=-1)


def per_digit_f1(classifiers, X, digits) -> dict:
    """Per-digit F1 of the one-vs-all predictions plus their macro average."""
    pred = one_vs_all_predict(classifiers, X)
    n_classes = np.asarray(classifiers).shape[0]
    out = {}
    for l in range(n_classes):
        out[l] = f1(np.where(pred == l, 1, -1), np.where(np.asarray(digits) == l, 1, -1)).f1
    out["macro"] = float(np.mean([out[l] for l in range(n_classes)]))
    return out


def fit_one_vs_all(X, digits, cfg: OptimizerConfig, lam: float = 0.1, n_classes: int = 10):
    """Train one ridge-logistic classifier per class with the same optimizer.

    Returns the stacked weights (n_classes, d) and the per-class run results.
    """
    digits = np.asarray(digits)
    weights, results = [], []
    for label in range(n_classes):
        ds = LabeledDataset(X, np.where(digits == label, 1.0, -1.0))
        res = run(RidgeLogistic(ds, lam), cfg)
        weights.append(res.w)
        results.append(res)
    return np.stack(weights), results


def traces_to_csv(trace: list[TraceRecord], header: dict | None = None, extended: bool = False) -> str:
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}: {value}\n")
    fields = list(TraceRecord.CSV_FIELDS)
    if extended:
        fields += [f for f in trace[0].as_row() if f not in fields] if trace else []
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for rec in trace:
        row = rec.as_row()
        writer.writerow([_fmt(row[f]) for f in fields])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def mean_contraction(deltas, floor: float = 0.0) -> float:
    """Geometric-mean per-epoch ratio of a positive suboptimality sequence.

    Only the leading run of values above ``floor`` is used, so a sequence
    that reaches machine precision does not register as stalled.
    """
    d = np.asarray(deltas, dtype=np.float64)
    keep = np.flatnonzero(d <= floor)
    if keep.size:
        d = d[: keep[0]]
    if d.size < 2:
        return math.nan
    return float((d[-1] / d[0]) ** (1.0 / (d.size - 1)))
