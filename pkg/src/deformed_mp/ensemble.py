"""Sampling ``𝒬 = Σ^{1/2} X X* Σ^{1/2}`` and seeded Monte Carlo runs.

Every trial draws from counter-based Philox streams keyed on
``(seed, role)``, where ``seed = base_seed + trial``, so a trial's output
depends only on its index and never on scheduling or worker count. BLAS is
pinned to one thread inside each trial for the same reason.
"""

from __future__ import annotations

import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from threadpoolctl import threadpool_limits

from . import freeconv
from .empirical import OmegaConfig, PopulationSpectrum, hat_edge, predict_eigenvalue
from .errors import DeformedMPError, NumericalError, ParameterError, RunError
from .freeconv import EdgeReport, SpectralPoint, ladder_solve
from .measure import JacobiMeasure

ENTRY_DISTS = ("gaussian", "rademacher", "uniform")
SIGMA_SOURCES = ("measure", "explicit", "rotated")
_ROLE = {"sigma": 0, "X": 1, "rotation": 2}
FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class SampleSpec:
    """Dimensions, entry law, population source and seed of one sample.

    ``sigma_source="rotated"`` conjugates ``diag(σ)`` by a Haar orthogonal
    matrix; it requires Gaussian entries. With ``freeze_sigma`` a Monte
    Carlo run reuses the population of its first trial.
    """

    M: int
    N: int
    entry_dist: str = "gaussian"
    sigma_source: str = "measure"
    seed: int = 0
    freeze_sigma: bool = False

    def __post_init__(self):
        if self.M < 2 or self.N < 2:
            raise ParameterError("M and N must be at least 2")
        if self.entry_dist not in ENTRY_DISTS:
            raise ParameterError(f"entry_dist must be one of {ENTRY_DISTS}")
        if self.sigma_source not in SIGMA_SOURCES:
            raise ParameterError(f"sigma_source must be one of {SIGMA_SOURCES}")
        if self.sigma_source == "rotated" and self.entry_dist != "gaussian":
            raise ParameterError("a rotated population needs gaussian entries")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")

    @property
    def d(self) -> float:
        return self.N / self.M


@dataclass
class EnsembleResult:
    M: int
    N: int
    lambdas: np.ndarray
    sigmas: np.ndarray
    seed: int
    wall_time: float

    @property
    def spectrum(self) -> PopulationSpectrum:
        return PopulationSpectrum(self.sigmas, self.N)


def stream(seed: int, role: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _ROLE[role]])))


def _entries(rng, dist: str, M: int, N: int) -> np.ndarray:
    if dist == "gaussian":
        X = rng.standard_normal((M, N))
    elif dist == "rademacher":
        X = rng.integers(0, 2, size=(M, N)).astype(float) * 2.0 - 1.0
    else:
        X = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=(M, N))
    X /= math.sqrt(N)
    return X


def _population(spec: SampleSpec, source, sigma_seed: int) -> np.ndarray:
    if isinstance(source, JacobiMeasure):
        sig = source.sample(spec.M, stream(sigma_seed, "sigma"))
    else:
        sig = np.asarray(source, dtype=float).ravel()
        if sig.size != spec.M:
            raise ParameterError(f"expected {spec.M} population eigenvalues, got {sig.size}")
    return np.sort(sig)[::-1].copy()


def haar_orthogonal(rng: np.random.Generator, M: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR with sign correction."""
    Z = rng.standard_normal((M, M))
    Qm, R = np.linalg.qr(Z)
    return Qm * np.sign(np.diag(R))


def draw(spec: SampleSpec, source, sigma_seed: Optional[int] = None):
    """``(sigmas, X, O)``; ``O`` is the rotation or ``None`` for diagonal ``Σ``."""
    sig = _population(spec, source, spec.seed if sigma_seed is None else sigma_seed)
    if np.any(sig <= 0):
        raise ParameterError("population eigenvalues must be positive")
    X = _entries(stream(spec.seed, "X"), spec.entry_dist, spec.M, spec.N)
    O = haar_orthogonal(stream(spec.seed, "rotation"), spec.M) if spec.sigma_source == "rotated" else None
    return sig, X, O


def _sqrt_sigma_times(sig, O, X):
    if O is None:
        return np.sqrt(sig)[:, None] * X
    return O @ (np.sqrt(sig)[:, None] * (O.T @ X))


def sample_ensemble(spec: SampleSpec, source: Union[JacobiMeasure, Sequence[float]], sigma_seed=None) -> EnsembleResult:
    """Draw one sample and return the eigenvalues of ``𝒬`` in descending order.

    ``source`` is a measure (i.i.d. population) or an explicit list of
    population eigenvalues.
    """
    t0 = time.perf_counter()
    sig, X, O = draw(spec, source, sigma_seed)
    Y = _sqrt_sigma_times(sig, O, X)
    S = Y @ Y.T
    try:
        lam = np.linalg.eigvalsh(S)[::-1].copy()
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(S) if np.all(np.isfinite(S)) else math.inf
        raise NumericalError(f"eigensolver failed (condition number {cond:.3g})") from exc
    frob = float(np.einsum("ij,ij->", Y, Y))
    if abs(lam.sum() - frob) > 1e-8 * spec.M * max(frob, 1.0):
        raise NumericalError(f"trace identity violated: {lam.sum()} vs {frob}")
    if lam[-1] < -1e-10 * max(lam[0], 1.0):
        raise NumericalError(f"negative eigenvalue {lam[-1]:.3g}")
    return EnsembleResult(spec.M, spec.N, lam, sig, spec.seed, time.perf_counter() - t0)


def m_trace(r: EnsembleResult, z) -> complex:
    """Stieltjes transform of the eigenvalues of ``X*ΣX`` (N x N, with zeros)."""
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    return complex((np.sum(1.0 / (r.lambdas - z)) + (r.N - r.M) / (-z)) / r.N)


# -- dense linearisation (test path) ---------------------------------------------


@dataclass(frozen=True)
class ProbeRecord:
    m_linearized: complex
    m_tilde: complex
    m_trace: complex
    trace_defect: float
    schur_defect: float
    ward_defect: float


def linearized_probe(spec: SampleSpec, source, z, spots: int = 3) -> ProbeRecord:
    """Resolvent identities on ``H(z) = [[-z I, X*], [X, -Σ^-1]]``.

    ``m`` is read off the Latin (first ``N``) block of ``G = H^-1``. The
    Schur and Ward checks use ``spots`` Latin indices drawn from the sample's
    own stream.
    """
    if spec.M + spec.N > 600:
        raise ParameterError("the dense linearisation is limited to M + N <= 600")
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    M, N = spec.M, spec.N
    sig, X, O = draw(spec, source)
    sinv = np.diag(1.0 / sig) if O is None else O @ np.diag(1.0 / sig) @ O.T
    H = np.zeros((N + M, N + M), dtype=complex)
    H[:N, :N] = -z * np.eye(N)
    H[:N, N:] = X.T
    H[N:, :N] = X
    H[N:, N:] = -sinv
    try:
        G = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("linearisation matrix is singular") from exc
    m_lin = np.trace(G[:N, :N]) / N
    m_tilde = np.trace(G[N:, N:]) / M
    rhs = np.trace(sinv @ G[N:, N:]) / (N * z) - (N - M) / (N * z)
    Y = _sqrt_sigma_times(sig, O, X)
    lam = np.linalg.eigvalsh(Y @ Y.T)[::-1]
    r = EnsembleResult(M, N, lam, sig, spec.seed, 0.0)

    rng = np.random.default_rng(spec.seed)
    idx = rng.choice(N, size=min(spots, N), replace=False)
    eta = z.imag
    schur, ward = 0.0, 0.0
    for a in idx:
        keep = np.delete(np.arange(N + M), a)
        Ga = np.linalg.inv(H[np.ix_(keep, keep)])
        greek = Ga[N - 1 :, N - 1 :]
        x = X[:, a]
        schur = max(schur, abs(G[a, a] - 1.0 / (-z - x @ greek @ x)))
        ward = max(ward, abs(np.sum(np.abs(G[a, :N]) ** 2) - G[a, a].imag / eta))
    return ProbeRecord(
        complex(m_lin), complex(m_tilde), m_trace(r, z), float(abs(m_lin - rhs)), float(schur), float(ward)
    )


# -- Monte Carlo --------------------------------------------------------------------


@dataclass(frozen=True)
class LocalLawSpec:
    """Grid for the local-law statistic ``sup |m_trace - m̂_fc| · M η_0``.

    Energies span ``L_+ ± M^φ κ_0`` (clipped to ``[l, 2 + τ_+]``), ``η`` runs
    log-spaced from ``η_0`` to ``M^{-1/(β+1)+φ}``. Points outside ``𝒟'_φ``
    (checked with the trial's own population) are skipped.
    """

    cfg: OmegaConfig = OmegaConfig()
    n_energy: int = 24
    n_eta: int = 4


@dataclass(frozen=True)
class Collector:
    top_k: int = 5
    hist_bins: Optional[int] = None
    hist_range: Optional[tuple] = None
    local_law: Optional[LocalLawSpec] = None

    def __post_init__(self):
        if self.top_k < 1:
            raise ParameterError("top_k must be positive")
        if self.hist_bins is not None and self.hist_bins < 1:
            raise ParameterError("hist_bins must be positive")


@dataclass
class TrialRow:
    trial: int
    seed: int
    lambdas: np.ndarray
    sigmas: np.ndarray
    L_plus_pred: float
    local_law: float = math.nan
    hist: Optional[np.ndarray] = None


@dataclass
class TrialTable:
    spec: SampleSpec
    collector: Collector
    rows: list
    failures: list = field(default_factory=list)
    hist_edges: Optional[np.ndarray] = None
    wall_time: float = 0.0

    def column(self, name: str, k: int = 1) -> np.ndarray:
        """``"lambda"``/``"sigma"`` (k-th largest), ``"L_plus_pred"`` or ``"local_law"``."""
        if name == "lambda":
            return np.array([r.lambdas[k - 1] for r in self.rows])
        if name == "sigma":
            return np.array([r.sigmas[k - 1] for r in self.rows])
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def histogram(self) -> Optional[np.ndarray]:
        if self.hist_edges is None:
            return None
        return np.sum([r.hist for r in self.rows], axis=0)

    def to_csv(self) -> str:
        k = self.collector.top_k
        head = ["trial", "seed"] + [f"lambda{i}" for i in range(1, k + 1)]
        head += [f"sigma{i}" for i in range(1, k + 1)] + ["L_plus_pred"]
        if self.collector.local_law is not None:
            head.append("local_law")
        buf = io.StringIO()
        buf.write(",".join(head) + "\n")
        for r in self.rows:
            vals = [str(r.trial), str(r.seed)] + [repr(float(x)) for x in r.lambdas]
            vals += [repr(float(x)) for x in r.sigmas] + [repr(float(r.L_plus_pred))]
            if self.collector.local_law is not None:
                vals.append(repr(float(r.local_law)))
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()

    def hist_csv(self) -> str:
        if self.hist_edges is None:
            raise ParameterError("no histogram was collected")
        buf = io.StringIO()
        buf.write("bin_left,bin_right,count\n")
        e = self.hist_edges
        for lo, hi, c in zip(e[:-1], e[1:], self.histogram):
            buf.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")
        return buf.getvalue()


_LL_CACHE: dict = {}


def _local_law_grid(m: JacobiMeasure, d: float, M: int, ll: LocalLawSpec, edge: EdgeReport):
    key = (id(m), d, M, ll)
    hit = _LL_CACHE.get(key)
    if hit is not None and hit[0] is m:
        return hit[1]
    phi = ll.cfg.resolve_phi(m.beta)
    k0 = M ** (-1.0 / (m.beta + 1.0))
    eta0 = M ** (-phi) / math.sqrt(M)
    lo = max(m.l, edge.L_plus - M**phi * k0)
    hi = min(2.0 + freeconv.tau_plus(m, d), edge.L_plus + M**phi * k0)
    energies = np.linspace(lo, hi, ll.n_energy)
    etas = np.geomspace(eta0, M ** (-1.0 / (m.beta + 1.0) + phi), ll.n_eta)
    sol = freeconv.solve_grid(m, d, energies, etas)
    z = np.array([p.z for p in sol.points])
    grid = (z, sol.values, 0.5 * M ** (-1.0 / (m.beta + 1.0) - phi), eta0)
    if len(_LL_CACHE) > 16:
        _LL_CACHE.clear()
    _LL_CACHE[key] = (m, grid)
    return grid


def local_law_statistic(r: EnsembleResult, m: JacobiMeasure, ll: LocalLawSpec, edge: EdgeReport) -> float:
    """``max |m_trace - m̂_fc| · M η_0`` over the ``𝒟'_φ`` points of the grid."""
    z, w_fc, thresh, eta0 = _local_law_grid(m, r.N / r.M, r.M, ll, edge)
    s = r.spectrum
    tail = s.sigmas[ll.cfg.n0 - 1 :]
    worst = -math.inf
    tau = None
    for zi, w in zip(z, w_fc):
        if np.min(np.abs(1.0 + 1.0 / (tail * w))) <= thresh:
            continue
        # the grid is column-major in E with descending eta: reuse the last solution
        tau, _, _ = ladder_solve(s.moments, complex(zi), freeconv.TOL, tau)
        worst = max(worst, abs(m_trace(r, zi) - 1.0 / tau))
    if worst == -math.inf:
        return math.nan
    return worst * r.M * eta0


@dataclass(frozen=True)
class _Job:
    spec: SampleSpec
    source: object
    collector: Collector
    edge: Optional[EdgeReport]
    hist_edges: Optional[np.ndarray]
    base_seed: int


def _one_trial(job: _Job, t: int):
    spec = replace(job.spec, seed=job.base_seed + t)
    sigma_seed = job.base_seed if spec.freeze_sigma else None
    with threadpool_limits(limits=1):
        r = sample_ensemble(spec, job.source, sigma_seed)
    k = job.collector.top_k
    e = job.edge
    if e is not None and e.supercritical:
        pred = predict_eigenvalue(e, r.sigmas[0])
    else:
        try:
            pred = hat_edge(r.spectrum, check_regime=False).L_plus
        except DeformedMPError:
            pred = math.nan
    row = TrialRow(t, spec.seed, r.lambdas[:k].copy(), r.sigmas[:k].copy(), float(pred))
    if job.hist_edges is not None:
        row.hist = np.histogram(r.lambdas, bins=job.hist_edges)[0]
    ll = job.collector.local_law
    if ll is not None:
        if not isinstance(job.source, JacobiMeasure):
            raise ParameterError("the local-law statistic needs a measure source")
        row.local_law = local_law_statistic(r, job.source, ll, e)
    return row


def _run_chunk(job: _Job, trials):
    out = []
    for t in trials:
        try:
            out.append(("ok", _one_trial(job, t)))
        except (DeformedMPError, ArithmeticError, np.linalg.LinAlgError) as exc:
            out.append(("fail", (t, f"{type(exc).__name__}: {exc}")))
    return out


def run_monte_carlo(
    spec: SampleSpec,
    trials: int,
    collector: Collector = Collector(),
    source: Union[JacobiMeasure, Sequence[float], None] = None,
    workers: Optional[int] = 1,
) -> TrialTable:
    """Run ``trials`` independent samples; trial ``t`` uses ``seed = spec.seed + t``.

    Rows are assembled by trial index, so the table (and its CSV) does not
    depend on ``workers``. Failed trials are listed in ``failures``; more
    than 5% failures raises :class:`RunError`.
    """
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    if source is None:
        raise ParameterError("a measure or an explicit population is required")
    t0 = time.perf_counter()
    edge = freeconv.edge(source, spec.d) if isinstance(source, JacobiMeasure) else None
    edges = None
    if collector.hist_bins is not None:
        if collector.hist_range is not None:
            lo, hi = collector.hist_range
        else:
            hi = 1.2 * (edge.L_plus if edge is not None else (1.0 + 1.0 / math.sqrt(spec.d)) ** 2)
            lo = 0.0
        edges = np.linspace(lo, hi, collector.hist_bins + 1)
    job = _Job(spec, source, collector, edge, edges, spec.seed)
    workers = max(1, int(workers or os.cpu_count() or 1))
    order = list(range(trials))
    if workers == 1 or trials == 1:
        results = _run_chunk(job, order)
    else:
        chunks = [order[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [job] * len(chunks), chunks))
        results = [item for part in parts for item in part]
    rows = sorted((v for k, v in results if k == "ok"), key=lambda r: r.trial)
    failures = sorted(v for k, v in results if k == "fail")
    table = TrialTable(spec, collector, rows, failures, edges, time.perf_counter() - t0)
    if len(failures) > FAILURE_LIMIT * trials:
        raise RunError(f"{len(failures)} of {trials} trials failed; first: {failures[0][1]}", table)
    return table
