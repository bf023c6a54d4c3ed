"""Stieltjes transform of ``ν ⊠ μ_MP`` and the right spectral edge.

``m_fc`` is the unique solution in the upper half plane of

    m = ( -z + d^-1 ∫ t dν(t) / (1 + t m) )^-1 .

Internally the equation is solved for ``tau = 1/m`` as ``F(tau) = z`` with

    F(tau) = -tau + d^-1 ∫ t tau / (tau + t) dν(t),

whose derivative ``-1 + d^-1 ∫ t^2/(tau+t)^2 dν`` is cheap, so Newton's
method applies. The iterate is kept on the physical branch by continuation
in ``eta`` (a descending ladder from ``eta = 4``) and by rejecting steps
that leave the half plane ``Im tau < 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import EvaluationError, ParameterError, RegimeError, SolverError
from .measure import JacobiMeasure

log = logging.getLogger(__name__)

TOL = 1e-12
MAX_ITER = 100_000
LADDER_TOP = 4.0
LADDER_RATIO = 0.5
DENSITY_ETAS = (1e-4, 5e-5)
CRITICAL_BAND = 1e-12


@dataclass(frozen=True)
class SpectralPoint:
    E: float
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ParameterError(f"eta must be positive, got {self.eta}")

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)


@dataclass
class StieltjesSolution:
    points: list
    values: np.ndarray
    residuals: np.ndarray
    iterations: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class EdgeReport:
    """Right-edge data for one aspect ratio ``d``.

    ``tau_plus`` and ``C_d`` are set in the supercritical and critical
    regimes, ``tau_star`` (the root of ``H = 1`` below -1) in the
    subcritical one.
    """

    d: float
    d_plus: float
    L_plus: float
    regime: str
    tau_plus: Optional[float] = None
    tau_star: Optional[float] = None
    C_d: Optional[float] = None

    @property
    def supercritical(self) -> bool:
        return self.regime == "supercritical"

    def record(self) -> str:
        items = [("d", self.d), ("d_plus", self.d_plus)]
        if self.tau_plus is not None:
            items.append(("tau_plus", self.tau_plus))
        if self.tau_star is not None:
            items.append(("tau_star", self.tau_star))
        items += [("L_plus", self.L_plus), ("regime", self.regime)]
        if self.C_d is not None:
            items.append(("C_d", self.C_d))
        return " ".join(f"{k}={_fmt(v)}" for k, v in items)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- generic tau-solver -----------------------------------------------------


def _measure_moments(m: JacobiMeasure, d: float):
    """``tau -> (A, B)`` with ``A = d^-1 ∫ t/(tau+t) dν`` and ``B = d^-1 ∫ t^2/(tau+t)^2 dν``."""

    def fn(tau):
        t, w = m.cauchy_rule(-tau)
        q = t / (tau + t)
        return np.dot(w, q) / d, np.dot(w, q * q) / d

    return fn


def _defect(tau, phi):
    # |w - map(w)| with w = 1/tau and map(w) = 1/(tau + phi)
    return abs(phi) / abs(tau * (tau + phi))


def newton_tau(moments, z: complex, tau0: complex, tol=TOL, max_iter=200):
    """Solve ``-tau + tau*A(tau) = z`` by damped Newton.

    Returns ``(tau, defect, iterations)``. The half plane of ``tau`` is
    fixed by the sign of ``Im z`` (``Im tau`` has the opposite sign).
    """
    sign = 1.0 if z.imag > 0 else -1.0
    tau = complex(tau0)
    if tau.imag * sign >= 0:
        tau = complex(tau.real, -sign * max(abs(z.imag), 1e-300))
    A, B = moments(tau)
    phi = -tau + tau * A - z
    for it in range(1, max_iter + 1):
        res = _defect(tau, phi)
        if res < tol:
            return tau, res, it - 1
        step = phi / (-1.0 + B)
        lam = 1.0
        while True:
            cand = tau - lam * step
            if cand.imag * sign < 0:
                cA, cB = moments(cand)
                cphi = -cand + cand * cA - z
                if abs(cphi) < (1.0 - 1e-4 * lam) * abs(phi) or lam < 1e-12:
                    break
            lam *= 0.5
            if lam < 1e-12:
                raise SolverError(f"Newton line search failed at z={z}", res)
        tau, A, B, phi = cand, cA, cB, cphi
    raise SolverError(f"Newton did not converge at z={z}", _defect(tau, phi))


def picard_w(moments, z: complex, w0: complex = 1j, alpha=0.5, tol=TOL, max_iter=MAX_ITER):
    """Damped Picard iteration ``w <- (1-alpha) w + alpha * map(w)``.

    Slow where ``R_2`` is close to 1 but free of any branch-selection
    logic; used as an independent check of :func:`newton_tau`.
    """
    w = complex(w0)
    for it in range(1, max_iter + 1):
        tau = 1.0 / w
        A, _ = moments(tau)
        mapped = 1.0 / (-z + tau * A)
        res = abs(w - mapped)
        if res < tol:
            return mapped, res, it
        w = (1.0 - alpha) * w + alpha * mapped
    raise SolverError(f"Picard iteration did not converge at z={z}", res)


def ladder_solve(moments, z: complex, tol=TOL, tau0=None):
    """Newton with continuation: descend ``eta`` geometrically to ``Im z``.

    If ``tau0`` is given it is used directly at the target point, with the
    ladder as fallback.
    """
    if tau0 is not None:
        try:
            return newton_tau(moments, z, tau0, tol)
        except SolverError:
            pass
    eta = abs(z.imag)
    sign = 1.0 if z.imag > 0 else -1.0
    ladder = []
    h = max(LADDER_TOP, eta)
    while h > eta:
        ladder.append(h)
        h *= LADDER_RATIO
    ladder.append(eta)
    tau = -complex(z.real, sign * ladder[0])
    total = 0
    for h in ladder:
        tau, res, it = newton_tau(moments, complex(z.real, sign * h), tau, tol)
        total += it
    return tau, res, total


# -- public operations ---------------------------------------------------------


def solve_mfc(m: JacobiMeasure, d: float, z, tol: float = TOL, method: str = "newton", w0=None):
    """``m_fc(z)`` for the measure ``m`` and aspect ratio ``d = N/M``.

    ``z`` may be a :class:`SpectralPoint` or a complex number with positive
    imaginary part. ``method="picard"`` runs the damped fixed-point
    iteration from ``w0`` (default ``i``) instead of Newton continuation.
    """
    return solve_mfc_full(m, d, z, tol, method, w0)[0]


def solve_mfc_full(m, d, z, tol=TOL, method="newton", w0=None):
    """Like :func:`solve_mfc` but returns ``(w, defect, iterations)``."""
    if d <= 0:
        raise ParameterError("d must be positive")
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    if not z.imag > 0:
        raise ParameterError("spectral parameter must lie in the upper half plane")
    moments = _measure_moments(m, d)
    if method == "picard":
        return picard_w(moments, z, 1j if w0 is None else w0, tol=tol)
    if method != "newton":
        raise ParameterError(f"unknown method {method!r}")
    tau, res, it = ladder_solve(moments, z, tol, None if w0 is None else 1.0 / w0)
    return 1.0 / tau, res, it


def fixed_point_map(m: JacobiMeasure, d: float, z: complex, w: complex) -> complex:
    """One application of ``w -> (-z + d^-1 ∫ t dν/(1 + t w))^-1``."""
    A, _ = _measure_moments(m, d)(1.0 / w)
    return 1.0 / (-z + A / w)


def solve_grid(m: JacobiMeasure, d: float, energies, etas, tol=TOL) -> StieltjesSolution:
    """Solve on the product grid ``energies x etas``.

    Each energy column is walked in descending ``eta`` and every point
    starts from the previous solution in that column.
    """
    moments = _measure_moments(m, d)
    return _grid(moments, energies, etas, tol)


def _grid(moments, energies, etas, tol):
    etas_desc = sorted(set(float(e) for e in etas), reverse=True)
    points, values, residuals, iters = [], [], [], []
    for E in energies:
        tau = None
        for h in etas_desc:
            z = complex(E, h)
            tau, res, it = ladder_solve(moments, z, tol, tau)
            points.append(SpectralPoint(float(E), h))
            values.append(1.0 / tau)
            residuals.append(res)
            iters.append(it)
    return StieltjesSolution(points, np.array(values), np.array(residuals), np.array(iters))


def r2(m: JacobiMeasure, d: float, z: complex, w: complex) -> float:
    """``R_2(z) = d^-1 ∫ t^2 |w|^2 / |t w + 1|^2 dν`` at ``w = m_fc(z)``."""
    t, wts = m.cauchy_rule(-1.0 / w)
    return float(np.dot(wts, t**2 * abs(w) ** 2 / np.abs(t * w + 1.0) ** 2) / d)


def density_fc(m: JacobiMeasure, d: float, E: float) -> float:
    """Density of ``μ_fc`` at ``E`` by Stieltjes inversion.

    ``Im m_fc`` is evaluated at ``eta = 1e-4`` and ``5e-5`` and extrapolated
    linearly to ``eta = 0``. This is the absolutely continuous part; for
    ``d > 1`` the law also has an atom of mass ``1 - 1/d`` at zero (see
    :func:`atom_at_zero`).
    """
    moments = _measure_moments(m, d)
    return _density(moments, E, atom_at_zero(d))[0]


def _density(moments, E, atom, tau=None):
    e1, e2 = DENSITY_ETAS
    t1, _, _ = ladder_solve(moments, complex(E, e1), TOL, tau)
    t2, _, _ = ladder_solve(moments, complex(E, e2), TOL, t1)
    # remove the Poisson kernel of the atom at 0, which extrapolation misses when E ~ eta
    im1 = (1.0 / t1).imag - atom * e1 / (E * E + e1 * e1)
    im2 = (1.0 / t2).imag - atom * e2 / (E * E + e2 * e2)
    val = (e1 * im2 - e2 * im1) / (e1 - e2) / math.pi
    if val < 0:
        if val < -1e-8:
            raise SolverError(f"density extrapolation is negative ({val:.3g}) at E={E}", -val)
        val = 0.0
    return val, t2


def density_curve(m: JacobiMeasure, d: float, energies) -> np.ndarray:
    """:func:`density_fc` on many energies, continuing the solution along ``E``."""
    moments = _measure_moments(m, d)
    atom = atom_at_zero(d)
    out = np.empty(len(energies))
    tau = None
    for i, E in enumerate(energies):
        out[i], tau = _density(moments, float(E), atom, tau)
    return out


def atom_at_zero(d: float) -> float:
    """Mass of ``μ_fc`` at the origin: the ``N - M`` zero eigenvalues of ``X*ΣX``."""
    return max(0.0, 1.0 - 1.0 / d)


def _check_tau(m, tau):
    if abs(tau.imag) < 1e-14 and -1.0 <= tau.real <= -m.l:
        raise EvaluationError(f"tau={tau} lies on the singular segment [-1, -l]")


def F_of_tau(m: JacobiMeasure, d: float, tau: complex) -> complex:
    """``F(tau) = -tau + d^-1 ∫ t tau/(tau + t) dν``; ``F(1/m_fc(z)) = z``."""
    tau = complex(tau)
    _check_tau(m, tau)
    t, w = m.cauchy_rule(-tau)
    den = tau + t
    if np.min(np.abs(den)) < 1e-14:
        raise EvaluationError(f"node collision at tau={tau}")
    val = -tau + np.dot(w, t * tau / den) / d
    return complex(val.real, 0.0) if tau.imag == 0 else complex(val)


def H_of_tau(m: JacobiMeasure, d: float, tau: complex) -> float:
    """``H(tau) = d^-1 ∫ t^2 / |tau + t|^2 dν``."""
    tau = complex(tau)
    _check_tau(m, tau)
    t, w = m.cauchy_rule(-tau)
    den = (tau.real + t) ** 2 + tau.imag**2
    if np.min(den) < 1e-28:
        raise EvaluationError(f"node collision at tau={tau}")
    return float(np.dot(w, t**2 / den) / d)


def compute_d_plus(m: JacobiMeasure) -> float:
    """Threshold ``d_plus = ∫ t^2/(1-t)^2 dν``; infinite unless ``beta > 1``."""
    if not m.beta > 1:
        raise RegimeError(f"d_plus = inf for beta = {m.beta} <= 1")
    return m.integrate(lambda t: t**2 / (1.0 - t) ** 2, singular_power=2)


def tau_plus(m: JacobiMeasure, d: float) -> float:
    """``d^-1 ∫ t/(1-t) dν`` (finite for ``beta > 0``)."""
    return m.integrate(lambda t: t / (1.0 - t), singular_power=1) / d


def edge(m: JacobiMeasure, d: float) -> EdgeReport:
    """Right edge ``L_plus`` of ``μ_fc`` and the regime of ``d``.

    Supercritical: ``L_plus = 1 + tau_plus``. Subcritical: ``tau_star``
    is the root of ``H(tau) = 1`` on ``(-inf, -1)`` (``H`` decreases there)
    and ``L_plus = F(tau_star)``. For ``beta <= 1`` every ``d`` is
    subcritical.
    """
    if d <= 0:
        raise ParameterError("d must be positive")
    d_plus = compute_d_plus(m) if m.beta > 1 else math.inf
    if abs(d - d_plus) < CRITICAL_BAND:
        tp = tau_plus(m, d)
        return EdgeReport(d, d_plus, 1.0 + tp, "critical", tau_plus=tp)
    if d > d_plus:
        tp = tau_plus(m, d)
        return EdgeReport(d, d_plus, 1.0 + tp, "supercritical", tau_plus=tp, C_d=(d - d_plus) / d)
    tau_star = _subcritical_root(lambda tau: H_of_tau(m, d, tau) - 1.0)
    L = F_of_tau(m, d, tau_star).real
    return EdgeReport(d, d_plus, L, "subcritical", tau_star=tau_star)


def _subcritical_root(h):
    """Root of a decreasing ``h`` on ``(-inf, -1)`` with ``h(-1-) > 0``."""
    hi = -1.0 - 1e-8
    if h(hi) <= 0:
        raise RegimeError("H(-1) <= 1: the spectrum is not subcritical")
    step = 1e-8
    lo = hi - step
    while h(lo) > 0:
        step *= 2.0
        lo = hi - step
        if step > 1e12:
            raise SolverError("could not bracket the subcritical root")
    return brentq(h, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def linearization_check(m: JacobiMeasure, d: float, z, report: Optional[EdgeReport] = None):
    """Compare ``1/m_fc(z)`` with its linearisation at the edge.

    Returns ``(predicted, actual)`` where
    ``predicted = -1 + d/(d - d_plus) (L_plus - z)``.
    """
    report = report or edge(m, d)
    if not report.supercritical:
        raise RegimeError("linearisation at the edge needs d > d_plus")
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    predicted = -1.0 + d / (d - report.d_plus) * (report.L_plus - z)
    actual = 1.0 / solve_mfc(m, d, z)
    return predicted, actual


def edge_mass(m: JacobiMeasure, d: float, kappa: float, L_plus: float, order: int = 24) -> float:
    """``μ_fc([L_plus - kappa, L_plus])`` by Gauss-Legendre on the density."""
    x, w = np.polynomial.legendre.leggauss(order)
    E = L_plus - kappa / 2.0 * (1.0 + x)
    rho = density_curve(m, d, E)
    return float(kappa / 2.0 * np.dot(w, rho))


def edge_exponent_fit(m: JacobiMeasure, d: float, kappas: Sequence[float], quantity="density") -> float:
    """Least-squares slope of ``log μ_fc`` against ``log kappa`` at the edge.

    ``quantity="density"`` fits the density at ``L_plus - kappa`` (slope
    close to ``beta``); ``"mass"`` fits the mass of ``[L_plus - kappa,
    L_plus]`` (slope close to ``beta + 1``).
    """
    kappas = np.asarray(kappas, dtype=float)
    if len(kappas) < 3:
        raise ParameterError("need at least three kappa values for a slope")
    if np.any(kappas <= 0):
        raise ParameterError("kappa values must be positive")
    report = edge(m, d)
    if not report.supercritical:
        raise RegimeError("edge exponent fit needs d > d_plus")
    if quantity == "density":
        y = density_curve(m, d, report.L_plus - kappas)
    elif quantity == "mass":
        y = np.array([edge_mass(m, d, k, report.L_plus) for k in kappas])
    else:
        raise ParameterError(f"unknown quantity {quantity!r}")
    slope, _ = np.polyfit(np.log(kappas), np.log(y), 1)
    return float(slope)
