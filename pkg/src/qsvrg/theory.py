"""Closed-form convergence guarantees for quantized SVRG.

Fixed grids: the expected suboptimality contracts by ``sigma_fixed`` toward
an offset ``gamma_fixed`` set by the quantization errors.  Adaptive grids:
it contracts by ``sigma_adaptive`` all the way to zero, provided enough
bits per coordinate and a long enough epoch.  ``min_bits_per_dim`` and
``min_epoch_length`` invert the adaptive rate for a target contraction.

Every calculator returns a :class:`Bound`, which keeps the value together
with the list of violated preconditions instead of producing NaN or a
meaningless negative number.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import mpmath

__all__ = [
    "ProblemConstants",
    "Bound",
    "BoundNotApplicable",
    "sigma_fixed",
    "gamma_fixed",
    "sigma_adaptive",
    "min_bits_per_dim",
    "min_epoch_length",
    "min_epoch_length_fixed",
    "max_step_size",
]

mpmath.mp.dps = 50


class BoundNotApplicable(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConstants:
    mu: float
    L: float
    d: int = 1
    alpha: float = 0.0
    T: int = 1
    b_per_d: float = float("inf")

    def __post_init__(self):
        if not (0 < self.mu <= self.L):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")
        if self.alpha <= 0:
            raise ValueError("step size must be positive")
        if self.d < 1 or self.T < 1:
            raise ValueError("d and T must be positive")

    def with_(self, **changes) -> "ProblemConstants":
        return replace(self, **changes)


@dataclass(frozen=True)
class Bound:
    value: float | None
    applicable: bool
    failed: tuple[str, ...] = field(default=())

    def unwrap(self) -> float:
        if not self.applicable:
            raise BoundNotApplicable("bound not applicable: " + "; ".join(self.failed))
        return self.value

    def __float__(self):
        return float(self.unwrap())


def _mp(x):
    return mpmath.mpf(x) if not isinstance(x, mpmath.mpf) else x


def max_step_size(L: float) -> float:
    """Step sizes must stay strictly below 1/(6L)."""
    return 1.0 / (6.0 * L)


def _step_ok(c: ProblemConstants) -> list[str]:
    if _mp(c.alpha) * 6 * _mp(c.L) < 1:
        return []
    return [f"step size {c.alpha} must be < 1/(6L) = {max_step_size(c.L):.6g}"]


def _quant_penalty(c: ProblemConstants):
    """(4L/mu) (1 + 3 L^2 alpha^2) d / (2^{b/d} - 1)^2; zero for infinite bits."""
    if c.b_per_d == float("inf"):
        return mpmath.mpf(0)
    mu, L, a = _mp(c.mu), _mp(c.L), _mp(c.alpha)
    levels = mpmath.power(2, _mp(c.b_per_d)) - 1
    return 4 * L / mu * (1 + 3 * L**2 * a**2) * c.d / levels**2


def _fixed_T_threshold(c: ProblemConstants):
    mu, L, a = _mp(c.mu), _mp(c.L), _mp(c.alpha)
    return 1 / (mu * a * (1 - 6 * L * a))


def sigma_fixed(c: ProblemConstants) -> Bound:
    """Contraction factor with fixed quantization grids."""
    mu, L, a, T = _mp(c.mu), _mp(c.L), _mp(c.alpha), _mp(c.T)
    failed = _step_ok(c)
    value = (1 / (mu * T) + 3 * L * a**2) / (a - 3 * L * a**2)
    if not failed and not T > _fixed_T_threshold(c):
        failed.append(f"epoch length T={c.T} must exceed {float(_fixed_T_threshold(c)):.6g}")
    if not failed and not (0 < value < 1):
        failed.append(f"contraction {float(value):.6g} outside (0, 1)")
    return Bound(float(value), not failed, tuple(failed))


def gamma_fixed(c: ProblemConstants, delta_k: float, beta_sum: float) -> Bound:
    """Radius of the suboptimality ball left by fixed-grid quantization."""
    mu, L, a, T = _mp(c.mu), _mp(c.L), _mp(c.alpha), _mp(c.T)
    if delta_k < 0 or beta_sum < 0:
        raise ValueError("quantization error terms must be nonnegative")
    failed = _step_ok(c)
    denom = 2 * T * a - 12 * L * T * a**2 - 2 / mu
    if denom <= 0:
        failed.append(f"denominator 2T*alpha - 12LT*alpha^2 - 2/mu = {float(denom):.6g} is not positive")
        return Bound(None, False, tuple(failed))
    value = (3 * T * a**2 * _mp(delta_k) + _mp(beta_sum)) / denom
    return Bound(float(value), not failed, tuple(failed))


def _adaptive_T_denominator(c: ProblemConstants, sigma_bar=None):
    mu, L, a = _mp(c.mu), _mp(c.L), _mp(c.alpha)
    if sigma_bar is None:
        base = mu * a * (1 - 6 * L * a)
    else:
        s = _mp(sigma_bar)
        base = mu * a * (s - 3 * L * a * s - 3 * L * a)
    return base - _quant_penalty(c)


def _min_bits(c: ProblemConstants, slack):
    mu, L, a = _mp(c.mu), _mp(c.L), _mp(c.alpha)
    inner = 4 * L * c.d * (1 + 3 * L**2 * a**2) / (mu**2 * a * slack)
    return int(mpmath.ceil(mpmath.log(1 + mpmath.sqrt(inner), 2)))


def sigma_adaptive(c: ProblemConstants) -> Bound:
    """Contraction factor with adaptive grids and b/d bits per coordinate.

    The value is reported whenever the step size is admissible; the bound
    is flagged inapplicable when b/d or T fall short of the sufficient
    conditions that certify it.
    """
    failed = _step_ok(c)
    if failed:
        return Bound(None, False, tuple(failed))
    mu, L, a, T = _mp(c.mu), _mp(c.L), _mp(c.alpha), _mp(c.T)
    value = (1 / T + 3 * mu * L * a**2 + _quant_penalty(c)) / (mu * (a - 3 * L * a**2))
    if c.b_per_d != float("inf"):
        need = _min_bits(c, 1 - 6 * L * a)
        if c.b_per_d < need:
            failed.append(f"b/d={c.b_per_d} below the sufficient {need}")
    denom = _adaptive_T_denominator(c)
    if denom <= 0:
        failed.append("bits too few for any epoch length")
    elif not T > 1 / denom:
        failed.append(f"epoch length T={c.T} must exceed {float(1 / denom):.6g}")
    if not failed and not (0 < value < 1):
        failed.append(f"contraction {float(value):.6g} outside (0, 1)")
    return Bound(float(value), not failed, tuple(failed))


def _target_slack(c: ProblemConstants, sigma_bar: float) -> tuple[mpmath.mpf, list[str]]:
    failed = _step_ok(c)
    if not 0 < sigma_bar < 1:
        failed.append(f"target contraction {sigma_bar} must lie in (0, 1)")
    L, a, s = _mp(c.L), _mp(c.alpha), _mp(sigma_bar)
    slack = s - 3 * L * a * s - 3 * L * a
    if slack <= 0:
        failed.append(f"sigma_bar - 3L*alpha*sigma_bar - 3L*alpha = {float(slack):.6g} is not positive")
    return slack, failed


def min_bits_per_dim(c: ProblemConstants, sigma_bar: float) -> Bound:
    """Smallest integer b/d that can reach contraction ``sigma_bar``."""
    slack, failed = _target_slack(c, sigma_bar)
    if failed:
        return Bound(None, False, tuple(failed))
    return Bound(_min_bits(c, slack), True)


def min_epoch_length(c: ProblemConstants, sigma_bar: float) -> Bound:
    """Smallest integer T strictly above the adaptive-grid requirement at ``c.b_per_d``."""
    slack, failed = _target_slack(c, sigma_bar)
    if failed:
        return Bound(None, False, tuple(failed))
    denom = _adaptive_T_denominator(c, sigma_bar)
    if denom <= 0:
        return Bound(None, False, (f"infeasible: b/d={c.b_per_d} leaves no room for any epoch length",))
    return Bound(int(mpmath.floor(1 / denom)) + 1, True)


def min_epoch_length_fixed(c: ProblemConstants, sigma_bar: float) -> Bound:
    """Smallest T for which ``sigma_fixed`` is certified and at most ``sigma_bar``."""
    slack, failed = _target_slack(c, sigma_bar)
    if failed:
        return Bound(None, False, tuple(failed))
    mu, a = _mp(c.mu), _mp(c.alpha)
    for_target = 1 / (mu * a * slack)
    threshold = _fixed_T_threshold(c)
    T = max(int(mpmath.ceil(for_target)), int(mpmath.floor(threshold)) + 1)
    return Bound(T, True)
