"""Finite-M counterparts of the free-convolution quantities.

Here ``ν`` is replaced by the empirical law of a concrete population
spectrum ``σ_1 ≥ … ≥ σ_M`` and ``d`` by ``N/M``, so every integral
``d^-1 ∫ g dν`` becomes ``N^-1 Σ_α g(σ_α)``. Indices ``gamma`` are 1-based
throughout, as in the ordering of the eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import freeconv
from .errors import DomainError, ParameterError, RegimeError, RootError
from .freeconv import EdgeReport, SpectralPoint, TOL, ladder_solve
from .measure import JacobiMeasure


@dataclass(frozen=True, eq=False)
class PopulationSpectrum:
    """Eigenvalues of ``Σ`` (sorted descending on construction) and sample size ``N``."""

    sigmas: np.ndarray
    N: int

    def __post_init__(self):
        s = np.sort(np.asarray(self.sigmas, dtype=float).ravel())[::-1].copy()
        if s.size < 2:
            raise ParameterError("need at least two population eigenvalues")
        if not (np.all(np.isfinite(s)) and s[-1] > 0 and s[0] <= 1.0):
            raise DomainError("population eigenvalues must lie in (0, 1]")
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError("N must be a positive integer")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "N", int(self.N))

    @property
    def M(self) -> int:
        return self.sigmas.size

    @property
    def d_hat(self) -> Fraction:
        return Fraction(self.N, self.M)

    @property
    def d(self) -> float:
        return self.N / self.M

    def moments(self, tau):
        """``(N^-1 Σ σ/(τ+σ), N^-1 Σ σ²/(τ+σ)²)``, the discrete solver moments."""
        q = self.sigmas / (tau + self.sigmas)
        return q.sum() / self.N, np.dot(q, q) / self.N

    def H(self, tau: float) -> float:
        """Discrete ``H``: ``N^-1 Σ σ²/(τ+σ)²`` for real ``τ``."""
        return float(np.sum((self.sigmas / (tau + self.sigmas)) ** 2) / self.N)

    def F(self, tau: complex) -> complex:
        """Discrete ``F``: ``-τ + N^-1 Σ στ/(τ+σ)``."""
        return -tau + tau * self.moments(tau)[0]


def _point(z) -> complex:
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    if not z.imag > 0:
        raise ParameterError("spectral parameter must lie in the upper half plane")
    return z


def hat_mfc(s: PopulationSpectrum, z, tol: float = TOL, init: Optional[complex] = None) -> complex:
    """``m̂_fc(z)``, solving ``ŵ = (-z + N^-1 Σ σ/(σŵ+1))^-1`` with ``Im ŵ > 0``.

    ``init`` is an optional starting value for ``ŵ`` (e.g. the solution at
    a neighbouring point); the ``eta`` ladder is the fallback.
    """
    z = _point(z)
    tau, _, _ = ladder_solve(s.moments, z, tol, None if init is None else 1.0 / init)
    return 1.0 / tau


def hat_r2(s: PopulationSpectrum, z, exclude: Optional[int] = None, w: Optional[complex] = None) -> float:
    """``N^-1 Σ_{α≠exclude} σ²|ŵ|²/|σŵ+1|²`` at ``ŵ = m̂_fc(z)``."""
    if w is None:
        w = hat_mfc(s, z)
    terms = s.sigmas**2 * abs(w) ** 2 / np.abs(s.sigmas * w + 1.0) ** 2
    total = terms.sum()
    if exclude is not None:
        if not 1 <= exclude <= s.M:
            raise ParameterError(f"exclude index {exclude} outside 1..{s.M}")
        total -= terms[exclude - 1]
    return float(total / s.N)


def hat_edge(s: PopulationSpectrum, check_regime: bool = True) -> EdgeReport:
    """Right edge ``L̂_+`` of the finite-M law.

    ``τ̂`` is the root of ``Ĥ(τ) = 1`` on ``(-inf, -σ_1)``, where ``Ĥ`` decreases
    from ``+inf``, and ``L̂_+ = F̂(τ̂)``. When ``σ_1 < 1`` and ``Ĥ(-1) ≤ 1`` the
    spectrum is supercritical (``τ̂ ≥ -1``) and, with ``check_regime``, a
    :class:`RegimeError` is raised; use :func:`predict_eigenvalue` instead.
    Constant spectra are point masses and are always accepted.
    """
    sig = s.sigmas
    s1 = float(sig[0])
    h1 = s.H(-1.0) if s1 < 1.0 else math.inf
    if check_regime and s1 < 1.0 and h1 <= 1.0 and sig[-1] != s1:
        raise RegimeError(
            f"discrete spectrum is supercritical (N^-1 Σ σ²/(1-σ)² = {h1:.6g} <= 1); "
            "use predict_eigenvalue for the top eigenvalues"
        )
    g = lambda tau: s.H(tau) - 1.0
    hi = -s1 * (1.0 + 1e-12)  # Ĥ(hi) is of order 1e24/N
    step = max(s1, 1.0)
    lo = hi - step
    while g(lo) > 0:
        step *= 2.0
        lo = hi - step
    tau = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    L = float(s.F(tau).real)
    d_plus = float(np.sum(sig**2 / (1.0 - sig) ** 2) / s.M) if s1 < 1.0 else math.inf
    return EdgeReport(s.d, d_plus, L, "subcritical", tau_star=float(tau))


def predict_eigenvalue(e: EdgeReport, sigma_gamma: float) -> float:
    """Location ``L_+ - C_d (1 - σ_γ)`` of the ``γ``-th sample eigenvalue."""
    if not e.supercritical:
        raise RegimeError("eigenvalue locations are only predicted for d > d_plus")
    return e.L_plus - e.C_d * (1.0 - sigma_gamma)


# -- the good-configuration event ------------------------------------------------


def frak_b(beta: float) -> float:
    return (beta - 1.0) / (2.0 * (beta + 1.0))


@dataclass(frozen=True)
class OmegaConfig:
    """Parameters of the good-configuration check.

    ``phi=None`` means ``frak_b(beta)/8``. The grid covers ``l ≤ E ≤ 2 + τ_+``
    (linear, ``n_energy`` points) times ``M^{-1/2-φ} ≤ η ≤ M^{-1/(β+1)+φ}``
    (log-spaced, ``n_eta`` points).
    """

    phi: Optional[float] = None
    n0: int = 11
    c_threshold: float = 0.95
    C_eps: float = 10.0
    n_energy: int = 64
    n_eta: int = 16

    def __post_init__(self):
        if self.n0 <= 10:
            raise ParameterError("n0 must exceed 10")
        if not 0 < self.c_threshold < 1:
            raise ParameterError("c_threshold must lie in (0, 1)")
        if self.phi is not None and not self.phi > 0:
            raise ParameterError("phi must be positive")

    def resolve_phi(self, beta: float) -> float:
        if not beta > 1:
            raise RegimeError("the good-configuration event needs beta > 1")
        b = frak_b(beta)
        phi = b / 8.0 if self.phi is None else self.phi
        if not phi < (10.0 + (beta + 1.0) / (beta - 1.0)) * b:
            raise ParameterError(f"phi = {phi} violates the admissible bound for beta = {beta}")
        return phi

    @property
    def eps_factor(self) -> float:
        return 0.5

    @staticmethod
    def kappa0(M: int, beta: float) -> float:
        return M ** (-1.0 / (beta + 1.0))

    def eta0(self, M: int, beta: float) -> float:
        return M ** (-self.resolve_phi(beta)) / math.sqrt(M)


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    value: float
    bound: float

    def __str__(self):
        return f"{'pass' if self.passed else 'fail'}({self.value:.6g} vs {self.bound:.6g})"


@dataclass(frozen=True)
class OmegaReport:
    """Outcome of :func:`omega_check`.

    ``cond1.value`` is the worst signed margin over all displayed gap
    inequalities (positive means every one holds). ``cond2.value`` is the
    largest excluded-index sum seen on the grid, ``cond3.value`` the largest
    deviation of the discrete from the continuum integral.
    """

    cond1: CheckResult
    cond2: CheckResult
    cond3: CheckResult
    min_gap: float
    points_cond2: int

    @property
    def overall(self) -> bool:
        return self.cond1.passed and self.cond2.passed and self.cond3.passed

    def record(self) -> str:
        items = [
            ("cond1", self.cond1),
            ("cond2", self.cond2),
            ("cond3", self.cond3),
            ("min_gap", f"{self.min_gap:.6g}"),
            ("cond2_points", self.points_cond2),
            ("overall", "pass" if self.overall else "fail"),
        ]
        return " ".join(f"{k}={v}" for k, v in items)


def gap_margins(sigmas, M: int, beta: float, phi: float, n0: int):
    """Signed margins of every gap inequality in condition 1.

    Returns ``(margins, min_gap)``. Each margin is ``min(gap - lower,
    upper - gap)`` so that a strict inequality holds iff its margin is
    positive. Covers pairs ``γ ≤ n0-1``, ``β ≤ n0``, the distance
    ``|1 - σ_1|`` and the separation of ``σ_γ`` from ``σ_α``, ``α > n0``.
    """
    s = np.asarray(sigmas, dtype=float)
    k0 = M ** (-1.0 / (beta + 1.0))
    lower, upper = M ** (-phi) * k0, math.log(M) * k0
    top = s[:n0]
    out = []
    gaps = []
    for g in range(min(n0 - 1, len(s))):
        for b in range(len(top)):
            if b == g:
                continue
            gap = abs(top[b] - top[g])
            gaps.append(gap)
            out.append(min(gap - lower, upper - gap))
        if len(s) > n0:
            # the one-sided bound against the rest; the nearest is σ_{n0+1}
            gap = abs(s[n0:] - s[g]).min()
            out.append(gap - lower)
    gap1 = abs(1.0 - s[0])
    gaps.append(gap1)
    out.append(min(gap1 - lower, upper - gap1))
    return np.array(out), float(min(gaps))


_GRID_CACHE: dict = {}


def _continuum_grid(m: JacobiMeasure, d: float, M: int, cfg: OmegaConfig, phi: float):
    key = (id(m), d, M, cfg.n_energy, cfg.n_eta, phi)
    hit = _GRID_CACHE.get(key)
    if hit is not None and hit[0] is m:
        return hit[1]
    tp = freeconv.tau_plus(m, d)
    energies = np.linspace(m.l, 2.0 + tp, cfg.n_energy)
    etas = np.geomspace(M ** (-0.5 - phi), M ** (-1.0 / (m.beta + 1.0) + phi), cfg.n_eta)
    sol = freeconv.solve_grid(m, d, energies, etas)
    moms = freeconv._measure_moments(m, d)
    # d^-1 ∫ t/(t w + 1) dν = τ A(τ) with τ = 1/w
    cont = np.array([(1.0 / w) * moms(1.0 / w)[0] for w in sol.values])
    if len(_GRID_CACHE) > 16:
        _GRID_CACHE.clear()
    _GRID_CACHE[key] = (m, (sol.values, cont))
    return sol.values, cont


def omega_check(s: PopulationSpectrum, cfg: OmegaConfig, m: JacobiMeasure) -> OmegaReport:
    """Evaluate the three good-configuration conditions for ``s``.

    Conditions 2 and 3 use the continuum ``m_fc`` of ``m`` at ``d = N/M`` on
    the grid of ``cfg``; condition 2 is only binding at grid points whose
    Re-closest index (ties to the smaller index) is at most ``n0 - 1``.
    """
    M, beta = s.M, m.beta
    phi = cfg.resolve_phi(beta)
    margins, min_gap = gap_margins(s.sigmas, M, beta, phi, cfg.n0)
    worst1 = float(margins.min())
    cond1 = CheckResult(worst1 > 0, worst1, 0.0)

    ws, cont = _continuum_grid(m, s.d, M, cfg, phi)
    sig = s.sigmas
    worst2, count2, worst3 = 0.0, 0, 0.0
    for w, c in zip(ws, cont):
        re = np.abs((1.0 + 1.0 / (sig * w)).real)
        gamma = int(np.argmin(re))  # argmin returns the first, i.e. smallest index
        terms = sig / (sig * w + 1.0)
        worst3 = max(worst3, abs(terms.sum() / s.N - c))
        if gamma <= cfg.n0 - 2:
            r = sig**2 * abs(w) ** 2 / np.abs(sig * w + 1.0) ** 2
            worst2 = max(worst2, float((r.sum() - r[gamma]) / s.N))
            count2 += 1
    cond2 = CheckResult(worst2 < cfg.c_threshold, worst2, cfg.c_threshold)
    eps = cfg.eps_factor * phi
    budget = cfg.C_eps * M ** (phi + eps) / math.sqrt(M)
    cond3 = CheckResult(worst3 <= budget, worst3, budget)
    return OmegaReport(cond1, cond2, cond3, min_gap, count2)


# -- eigenvalue tracking ----------------------------------------------------------


def hat_z_gamma(
    s: PopulationSpectrum,
    gamma: int,
    cfg: OmegaConfig,
    edge: EdgeReport,
    beta: float,
    points: int = 512,
) -> float:
    """Largest ``E`` with ``1 + Re(1/(σ_γ m̂_fc(E + iη_0))) = 0``.

    The scan covers ``predict_eigenvalue(edge, σ_γ) ± 10 M^{-1/2+3φ}`` on
    ``points`` energies, continuing the solution along ``E``, and the last
    sign change is refined with brentq.
    """
    if not 1 <= gamma <= cfg.n0 - 1:
        raise ParameterError(f"gamma must lie in 1..{cfg.n0 - 1}")
    phi = cfg.resolve_phi(beta)
    M = s.M
    eta0 = M ** (-phi) / math.sqrt(M)
    sg = float(s.sigmas[gamma - 1])
    centre = predict_eigenvalue(edge, sg)
    half = 10.0 * M ** (-0.5 + 3.0 * phi)
    grid = np.linspace(centre - half, centre + half, points)

    def g_at(E, tau0=None):
        tau, _, _ = ladder_solve(s.moments, complex(E, eta0), TOL, tau0)
        return 1.0 + tau.real / sg, tau

    vals = np.empty(points)
    taus = [None] * points
    tau = None
    for i in range(points - 1, -1, -1):
        vals[i], tau = g_at(grid[i], tau)
        taus[i] = tau
    sign = np.sign(vals)
    idx = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
    if idx.size == 0:
        raise RootError(
            f"no sign change of 1 + Re(1/(σ_γ m̂)) for gamma={gamma} on "
            f"[{grid[0]:.6g}, {grid[-1]:.6g}] (values {vals.min():.3g}..{vals.max():.3g})"
        )
    i = int(idx[-1])
    if vals[i + 1] == 0:
        return float(grid[i + 1])
    seed = taus[i + 1]
    return float(brentq(lambda E: g_at(E, seed)[0], grid[i], grid[i + 1], xtol=1e-14, maxiter=200))
