"""Limit laws of the largest eigenvalues and goodness-of-fit summaries.

For ``d > d_plus`` the rescaled gap ``M^{1/(β+1)} (L_+ - λ_1)`` is Weibull
with shape ``β+1``; for ``d < d_plus`` the fluctuation ``M^{1/2} (λ_1 - L_+)``
is a centred Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from . import freeconv
from .errors import ParameterError, RegimeError
from .measure import JacobiMeasure


@dataclass(frozen=True)
class WeibullParams:
    shape: float
    c_nu: float
    M: Optional[int] = None
    C_d: Optional[float] = None

    def __post_init__(self):
        if not self.shape > 2:
            raise ParameterError("Weibull shape beta + 1 must exceed 2")
        if not self.c_nu > 0:
            raise ParameterError("C_nu must be positive")

    def cdf(self, s):
        return weibull_cdf(self, s)

    def median(self) -> float:
        return (self.shape * math.log(2.0) / self.c_nu) ** (1.0 / self.shape)


@dataclass(frozen=True)
class GaussianParams:
    variance_rescaled: float
    tau_star: float
    L_plus: float
    mean: float = 0.0

    def __post_init__(self):
        if self.variance_rescaled < 0:
            raise ParameterError("variance must be non-negative")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance_rescaled)

    def cdf(self, x):
        return stats.norm.cdf(x, loc=self.mean, scale=self.sd)


@dataclass
class TestReport:
    """Outcome of a limit-law comparison; ``verdicts`` maps check name to pass flag."""

    __test__ = False  # not a pytest class

    mode: str
    sample_count: int
    ks_statistic: float
    location_errors: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def record(self) -> str:
        items = [("mode", self.mode), ("samples", self.sample_count), ("ks", f"{self.ks_statistic:.6g}")]
        items += [(f"loc_err_{g}", f"{v:.6g}") for g, v in sorted(self.location_errors.items())]
        items += [(k, f"{v:.6g}") for k, v in self.stats.items()]
        items += [(k, "pass" if v else "fail") for k, v in self.verdicts.items()]
        return " ".join(f"{k}={v}" for k, v in items)


def weibull_cdf(p: WeibullParams, s):
    """``1 - exp(-C_ν s^{β+1}/(β+1))``, zero for ``s < 0``."""
    s = np.asarray(s, dtype=float)
    pos = np.maximum(s, 0.0)
    out = -np.expm1(-p.c_nu * pos**p.shape / p.shape)
    return float(out) if out.ndim == 0 else out


def c_nu(m: JacobiMeasure, d: float, d_plus: float) -> float:
    """``(d/(d - d_plus))^{β+1} f(1)/Z``."""
    if not d > d_plus:
        raise RegimeError("C_nu is only defined for d > d_plus")
    return (d / (d - d_plus)) ** (m.beta + 1.0) * m.edge_limit()


def weibull_params(m: JacobiMeasure, d: float, M: Optional[int] = None) -> WeibullParams:
    e = freeconv.edge(m, d)
    if not e.supercritical:
        raise RegimeError("the Weibull limit needs d > d_plus")
    return WeibullParams(m.beta + 1.0, c_nu(m, d, e.d_plus), M, e.C_d)


def rescale_supercritical(lambdas, L_plus: float, M: int, beta: float) -> np.ndarray:
    """``M^{1/(β+1)} (L_+ - λ)`` elementwise."""
    return M ** (1.0 / (beta + 1.0)) * (L_plus - np.asarray(lambdas, dtype=float))


def order_statistic_reference(sigmas, C_d: float, M: int, beta: float) -> np.ndarray:
    """``C_d M^{1/(β+1)} (1 - σ)`` elementwise."""
    return C_d * M ** (1.0 / (beta + 1.0)) * (1.0 - np.asarray(sigmas, dtype=float))


def gaussian_reference(m: JacobiMeasure, d: float) -> GaussianParams:
    """Variance ``d^-2 Var_ν(tτ*/(t+τ*))`` of ``M^{1/2}(L̂_+ - L_+)``."""
    e = freeconv.edge(m, d)
    if e.regime != "subcritical":
        raise RegimeError("the Gaussian limit needs d < d_plus")
    tau = e.tau_star
    g = lambda t: t * tau / (t + tau)
    first = m.integrate(g)
    second = m.integrate(lambda t: g(t) ** 2)
    v = max(second - first * first, 0.0) / d**2
    return GaussianParams(v, tau, e.L_plus)


def ks_distance(samples, cdf: Callable) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 1:
        raise ParameterError("no samples")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_two_sample(a, b) -> float:
    if len(a) < 1 or len(b) < 1:
        raise ParameterError("no samples")
    return float(stats.ks_2samp(a, b, method="asymp").statistic)


def ecdf_table(samples, cdf: Callable):
    """Rows ``(s, F_emp, F_ref)`` at the sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    return x, np.arange(1, x.size + 1) / x.size, np.asarray(cdf(x), dtype=float)


def m23_gap_check(lambdas, L_hat, M: int) -> float:
    """Median of ``|λ_1 - L̂_+| M^{2/3}`` over trials."""
    lam = np.asarray(lambdas, dtype=float)
    if lam.size < 1:
        raise ParameterError("no samples")
    return float(np.median(np.abs(lam - np.asarray(L_hat, dtype=float))) * M ** (2.0 / 3.0))


def weibull_report(lambdas: dict, sigmas: dict, m: JacobiMeasure, d: float, M: int, predicted: dict = None,
                   ks_limit: float = 0.20, ks_coupling: float = 0.10) -> TestReport:
    """Compare per-trial top eigenvalues with the Weibull law and the order statistics.

    ``lambdas`` and ``sigmas`` map ``γ`` to per-trial arrays; ``predicted``
    optionally maps ``γ`` to per-trial location predictions.
    """
    p = weibull_params(m, d, M)
    e = freeconv.edge(m, d)
    s1 = rescale_supercritical(lambdas[1], e.L_plus, M, m.beta)
    ref1 = order_statistic_reference(sigmas[1], e.C_d, M, m.beta)
    ks = ks_distance(s1, p.cdf)
    ks2 = ks_two_sample(s1, ref1)
    loc = {}
    for g, lam in lambdas.items():
        pred = predicted[g] if predicted else e.L_plus - e.C_d * (1.0 - np.asarray(sigmas[g]))
        loc[g] = float(np.median(np.abs(np.asarray(lam) - pred)))
    return TestReport(
        "weibull", int(s1.size), ks, loc,
        stats={"ks_coupling": ks2, "c_nu": p.c_nu},
        verdicts={"ks_limit": ks <= ks_limit, "ks_coupling": ks2 <= ks_coupling},
    )


def gaussian_report(lambdas, m: JacobiMeasure, d: float, M: int, L_hat=None,
                    ks_limit: float = 0.20, var_tol: float = 0.30) -> TestReport:
    """Compare ``M^{1/2}(λ_1 - L_+)`` with the centred Gaussian of :func:`gaussian_reference`."""
    g = gaussian_reference(m, d)
    x = math.sqrt(M) * (np.asarray(lambdas, dtype=float) - g.L_plus)
    n = x.size
    mean, var = float(x.mean()), float(x.var(ddof=1)) if n > 1 else 0.0
    se = math.sqrt(var / n) if n > 1 else math.inf
    ks = ks_distance(x, g.cdf)
    st = {"mean": mean, "se": se, "var": var, "v_ref": g.variance_rescaled}
    verdicts = {
        "mean": abs(mean) <= 3.0 * se,
        "variance": abs(var - g.variance_rescaled) <= var_tol * g.variance_rescaled,
        "ks_limit": ks <= ks_limit,
    }
    if L_hat is not None:
        st["m23_gap"] = m23_gap_check(lambdas, L_hat, M)
    return TestReport("gaussian", n, ks, {}, st, verdicts)
