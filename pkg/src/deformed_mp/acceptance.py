"""Acceptance criteria as runnable checks.

Each criterion returns a :class:`CriterionResult` with the measured values
and tolerances. ``desk`` scale uses the stated sizes; ``smoke`` shrinks
dimensions and trial counts so the whole suite runs in about a minute
(smoke verdicts are not meaningful, only the plumbing is exercised).
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import empirical, ensemble, extremal, freeconv
from .empirical import OmegaConfig, PopulationSpectrum
from .ensemble import Collector, LocalLawSpec, SampleSpec
from .measure import preset


@dataclass(frozen=True)
class Scale:
    name: str
    M_big: int
    M_mid: int
    M_small: int
    trials: int
    seeds_local: int
    seeds_omega: int


SCALES = {
    "desk": Scale("desk", 2000, 1000, 500, 200, 20, 100),
    "smoke": Scale("smoke", 200, 100, 50, 20, 4, 10),
}

SUITES = ("edge", "weibull", "gaussian", "local-law", "omega", "all")


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float = 0.0
    budget: float = math.inf

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (
            f"{flag} #{self.number} {self.title}: {self.measured} "
            f"[tol: {self.tolerance}] ({self.seconds:.1f}s / budget {self.budget:.0f}s)"
        )


class Runner:
    """Shared state for one verification session (measures, cached Monte Carlo tables)."""

    def __init__(self, scale: str = "desk", workers: int | None = None, base_seed: int = 20240601):
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}")
        self.scale = SCALES[scale]
        self.workers = workers or os.cpu_count() or 1
        self.base_seed = base_seed
        self.f1 = preset("f1")
        self._tables = {}

    def table(self, M: int, d: float, trials: int, collector: Collector, seed_offset: int = 0):
        key = (M, d, trials, collector, seed_offset)
        if key not in self._tables:
            spec = SampleSpec(M, int(round(d * M)), seed=self.base_seed + seed_offset)
            self._tables[key] = ensemble.run_monte_carlo(spec, trials, collector, self.f1, self.workers)
        return self._tables[key]


def _timed(budget: float):
    def wrap(fn):
        def run(runner: Runner) -> CriterionResult:
            t0 = time.perf_counter()
            res = fn(runner)
            res.seconds = time.perf_counter() - t0
            res.budget = budget
            if runner.scale.name == "desk" and res.seconds > budget:
                res.passed = False
                res.measured += f"; runtime {res.seconds:.1f}s over budget"
            return res

        run.__name__ = fn.__name__
        return run

    return wrap


@_timed(1.0)
def c1_threshold(r: Runner) -> CriterionResult:
    dp = freeconv.compute_d_plus(preset("f1"))
    return CriterionResult(1, "threshold d_plus(f1)", abs(dp - 0.703908) <= 1e-5, f"d_plus={dp:.9f}", "0.703908 ± 1e-5")


@_timed(1.0)
def c2_null_case(r: Runner) -> CriterionResult:
    errs = []
    for d in (1, 2, 4):
        s = PopulationSpectrum(np.ones(500), 500 * d)
        errs.append(abs(empirical.hat_edge(s).L_plus - (1.0 + 1.0 / math.sqrt(d)) ** 2))
    worst = max(errs)
    return CriterionResult(2, "null-case hat_edge = (1+1/sqrt d)^2", worst <= 1e-8, f"max error={worst:.3g}", "1e-8")


@_timed(30.0)
def c3_edge_exponent(r: Runner) -> CriterionResult:
    kappas = np.linspace(0.02, 0.1, 9)
    slope = freeconv.edge_exponent_fit(r.f1, 1.5, kappas, quantity="density")
    return CriterionResult(3, "edge exponent (density slope, kappa in [0.02,0.1])", 2.6 <= slope <= 3.4,
                           f"slope={slope:.4f}", "[2.6, 3.4]")


def _super_table(r: Runner, M: int):
    return r.table(M, 1.5, r.scale.trials, Collector(top_k=3))


def _location_medians(r: Runner, M: int):
    tab = _super_table(r, M)
    e = freeconv.edge(r.f1, 1.5)
    out = []
    for g in (1, 2, 3):
        pred = e.L_plus - e.C_d * (1.0 - tab.column("sigma", g))
        out.append(float(np.median(np.abs(tab.column("lambda", g) - pred))))
    return np.array(out)


@_timed(1800.0)
def c4_locations(r: Runner) -> CriterionResult:
    big, mid = r.scale.M_big, r.scale.M_mid
    med_big = _location_medians(r, big)
    med_mid = _location_medians(r, mid)
    ratio = med_mid / med_big
    bound = 5.0 / math.sqrt(big)
    ok = bool(np.all(med_big < bound) and np.all((ratio >= 1.2) & (ratio <= 2.5)))
    return CriterionResult(
        4, "supercritical eigenvalue locations", ok,
        f"median|λγ-pred| at M={big}: {np.array2string(med_big, precision=4)}; ratio M={mid}/M={big}: "
        f"{np.array2string(ratio, precision=3)}",
        f"< 5/sqrt(M) = {bound:.4f}; ratio in [1.2, 2.5]",
    )


@_timed(1800.0)
def c5_weibull(r: Runner) -> CriterionResult:
    M = r.scale.M_big
    tab = _super_table(r, M)
    rep = extremal.weibull_report({1: tab.column("lambda", 1)}, {1: tab.column("sigma", 1)}, r.f1, 1.5, M)
    return CriterionResult(
        5, "Weibull limit of the largest eigenvalue", rep.passed,
        f"KS vs G4={rep.ks_statistic:.4f}; KS vs order statistics={rep.stats['ks_coupling']:.4f}",
        "<= 0.20; <= 0.10",
    )


def _sub_table(r: Runner, M: int):
    return r.table(M, 0.5, r.scale.trials, Collector(top_k=1))


@_timed(1800.0)
def c6_gaussian(r: Runner) -> CriterionResult:
    M = r.scale.M_big
    tab = _sub_table(r, M)
    rep = extremal.gaussian_report(tab.column("lambda", 1), r.f1, 0.5, M)
    s = rep.stats
    return CriterionResult(
        6, "subcritical Gaussian fluctuation", rep.passed,
        f"mean={s['mean']:.4f} (se {s['se']:.4f}); var={s['var']:.4f} vs v={s['v_ref']:.4f}; KS={rep.ks_statistic:.4f}",
        "|mean| <= 3 se; |var/v - 1| <= 0.30; KS <= 0.20",
    )


@_timed(1800.0)
def c7_gap(r: Runner) -> CriterionResult:
    big, small = r.scale.M_big, r.scale.M_small
    gaps = {}
    for M in (small, big):
        tab = _sub_table(r, M)
        gaps[M] = extremal.m23_gap_check(tab.column("lambda", 1), tab.column("L_plus_pred"), M)
    factor = max(gaps.values()) / min(gaps.values())
    tab = _sub_table(r, big)
    lhat = tab.column("L_plus_pred")
    med = float(np.median(np.abs(tab.column("lambda", 1) - lhat)))
    sd = float(np.std(lhat, ddof=1))
    ok = factor <= 8.0 and med < 0.5 * sd
    return CriterionResult(
        7, "edge gap dominated by the Gaussian term", ok,
        f"median|λ1-L̂+|·M^(2/3): M={small}: {gaps[small]:.4f}, M={big}: {gaps[big]:.4f} (factor {factor:.3f}); "
        f"median|λ1-L̂+|={med:.5f} vs 0.5·std(L̂+)={0.5 * sd:.5f}",
        "factor <= 8; median < 0.5·std",
    )


@_timed(1200.0)
def c8_local_law(r: Runner) -> CriterionResult:
    sizes = (r.scale.M_small, r.scale.M_mid, r.scale.M_big)
    meds = {}
    for M in sizes:
        tab = r.table(M, 1.5, r.scale.seeds_local, Collector(top_k=1, local_law=LocalLawSpec()), seed_offset=50_000)
        meds[M] = float(np.nanmedian(tab.column("local_law")))
    vals = np.array(list(meds.values()))
    factor = float(vals.max() / vals.min())
    return CriterionResult(
        8, "local law near the edge", factor <= 4.0,
        "median sup|m-m̂|·Mη0: " + ", ".join(f"M={M}: {v:.4f}" for M, v in meds.items()) + f" (factor {factor:.3f})",
        "factor <= 4",
    )


def omega_fraction(m, M: int, seeds: int, base_seed: int, d: float = 1.5) -> float:
    cfg = OmegaConfig()
    passed = 0
    for k in range(seeds):
        sig = m.sample(M, ensemble.stream(base_seed + k, "sigma"))
        passed += empirical.omega_check(PopulationSpectrum(sig, int(round(d * M))), cfg, m).overall
    return passed / seeds


@_timed(600.0)
def c9_omega(r: Runner) -> CriterionResult:
    big, small = r.scale.M_big, r.scale.M_small
    n = r.scale.seeds_omega
    fb = omega_fraction(r.f1, big, n, r.base_seed + 90_000)
    fs = omega_fraction(r.f1, small, n, r.base_seed + 90_000)
    return CriterionResult(
        9, "good-configuration frequency trend", fb >= fs - 0.05,
        f"fraction at M={big}: {fb:.3f}; at M={small}: {fs:.3f}", "frac(big) >= frac(small) - 0.05",
    )


@_timed(10.0)
def c10_resolvent(r: Runner) -> CriterionResult:
    worst = np.zeros(4)
    for k in range(5):
        p = ensemble.linearized_probe(SampleSpec(50, 50, seed=r.base_seed + k), r.f1, 1.0 + 0.1j)
        worst = np.maximum(worst, [abs(p.m_linearized - p.m_trace), p.trace_defect, p.schur_defect, p.ward_defect])
    ok = bool(worst[0] < 1e-10 and worst[1] < 1e-10 and worst[2] < 1e-8 and worst[3] < 1e-8)
    return CriterionResult(
        10, "resolvent identities", ok,
        f"block-trace {worst[0]:.2g}, trace relation {worst[1]:.2g}, Schur {worst[2]:.2g}, Ward {worst[3]:.2g}",
        "1e-10, 1e-10, 1e-8, 1e-8",
    )


def invariant_checks(m, workers: int = 2):
    """Deterministic spot checks of the invariant suites; returns name -> (ok, detail)."""
    out = {}
    energies = np.linspace(0.05, 2.0, 40)
    etas = [1.0, 1e-1, 1e-2, 1e-3]
    worst_im, worst_r2 = math.inf, -math.inf
    for d in (0.5, 1.5):
        sol = freeconv.solve_grid(m, d, energies, etas)
        worst_im = min(worst_im, float(sol.values.imag.min()))
        for p, w in zip(sol.points, sol.values):
            worst_r2 = max(worst_r2, freeconv.r2(m, d, p.z, w))
    out["herglotz"] = (worst_im > 0, f"min Im m={worst_im:.3g}")
    out["r2_bound"] = (0 <= worst_r2 < 1, f"max R2={worst_r2:.6f}")

    s = PopulationSpectrum(m.sample(1000, 11), 1500)
    worst_id = 0.0
    for E in (0.5, 1.0, 1.3, 1.5):
        for eta in (1e-1, 1e-2, 1e-3):
            z = complex(E, eta)
            w = empirical.hat_mfc(s, z)
            worst_id = max(worst_id, abs(empirical.hat_r2(s, z, w=w) - (1.0 - eta * abs(w) ** 2 / w.imag)))
    out["r2_hat_identity"] = (worst_id < 1e-8, f"max defect={worst_id:.3g}")

    worst_mass = 0.0
    for d in (0.5, 1.5, 3.0):
        L = freeconv.edge(m, d).L_plus
        E = np.linspace(0.0, L, 20001)[1:]
        mass = np.trapezoid(freeconv.density_curve(m, d, E), E) + freeconv.atom_at_zero(d)
        worst_mass = max(worst_mass, abs(mass - 1.0))
    out["mass"] = (worst_mass <= 1e-3, f"max |mass-1|={worst_mass:.3g}")

    spec = SampleSpec(60, 90, seed=5)
    col = Collector(top_k=3, hist_bins=10)
    a = ensemble.run_monte_carlo(spec, 6, col, m, workers=1).to_csv()
    b = ensemble.run_monte_carlo(spec, 6, col, m, workers=workers).to_csv()
    out["determinism"] = (a == b, "identical" if a == b else "tables differ")
    return out


@_timed(300.0)
def c11_invariants(r: Runner) -> CriterionResult:
    res = invariant_checks(r.f1, workers=max(2, min(4, r.workers)))
    ok = all(v[0] for v in res.values())
    return CriterionResult(
        11, "invariant suites", ok, "; ".join(f"{k}: {v[1]}" for k, v in res.items()), "all hold"
    )


CRITERIA: dict[int, Callable] = {
    1: c1_threshold, 2: c2_null_case, 3: c3_edge_exponent, 4: c4_locations, 5: c5_weibull,
    6: c6_gaussian, 7: c7_gap, 8: c8_local_law, 9: c9_omega, 10: c10_resolvent, 11: c11_invariants,
}

SUITE_MEMBERS = {
    "edge": (1, 2, 3),
    "weibull": (4, 5),
    "gaussian": (6, 7),
    "local-law": (8,),
    "omega": (9,),
    "all": tuple(range(1, 12)),
}


def verify(suite: str = "all", scale: str = "desk", workers: int | None = None, emit=print) -> list:
    if suite not in SUITE_MEMBERS:
        raise ValueError(f"unknown suite {suite!r}")
    runner = Runner(scale, workers)
    results = []
    for n in SUITE_MEMBERS[suite]:
        res = CRITERIA[n](runner)
        results.append(res)
        if emit is not None:
            emit(res.line())
    return results
