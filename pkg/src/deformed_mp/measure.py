"""Jacobi measures ``Z^-1 (1-t)^beta f(t)`` on ``[l, 1]``.

The measure carries its own Gauss-Jacobi rule so that integrals whose
integrand blows up at ``t = 1`` (the edge integrals behind ``d_plus`` and
``tau_plus``) are evaluated with the singular factor folded into the weight.
Integrands with a pole close to the support, which is what the
self-consistent equation produces near the spectral edge, go through
:meth:`JacobiMeasure.cauchy_rule`, a composite rule graded towards the pole.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import PchipInterpolator
from scipy.special import roots_jacobi, roots_legendre

from .errors import DomainError, EvaluationError, ParameterError

__all__ = [
    "Profile",
    "QuadratureRule",
    "JacobiMeasure",
    "build_measure",
    "preset",
    "measure_from_spec",
    "PRESETS",
]

# nodes per panel of the graded rule
_PANEL_ORDER = 20
# beyond this distance from [l, 1] the global rule is accurate to ~1e-14
_FAR = 0.05
_CDF_TABLE_SIZE = 4096


@dataclass(frozen=True)
class Profile:
    """Smooth positive factor ``f`` of the density.

    ``kind`` is one of ``"const"``, ``"exp"`` or ``"poly"``; for ``"poly"``
    the coefficients are in increasing degree, ``c0 + c1 t + ...``.
    """

    kind: str = "const"
    coeffs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("const", "exp", "poly"):
            raise ParameterError(f"unknown profile kind {self.kind!r}")
        if self.kind == "poly" and not self.coeffs:
            raise ParameterError("polynomial profile needs at least one coefficient")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return np.ones_like(t)
        if self.kind == "exp":
            return np.exp(t)
        return P.polyval(t, np.asarray(self.coeffs, dtype=float))

    @classmethod
    def parse(cls, text: str) -> "Profile":
        text = text.strip()
        if text in ("const", "exp"):
            return cls(text)
        if text.startswith("poly:"):
            try:
                coeffs = tuple(float(c) for c in text[5:].split(","))
            except ValueError as exc:
                raise ParameterError(f"bad polynomial profile {text!r}") from exc
            return cls("poly", coeffs)
        raise ParameterError(f"unknown profile {text!r}")

    def spec(self) -> str:
        if self.kind == "poly":
            return "poly:" + ",".join(repr(c) for c in self.coeffs)
        return self.kind


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in ``(l, 1)`` with positive weights.

    Whether the weights already include the density depends on who built
    the rule; :meth:`JacobiMeasure.rule` returns measure weights.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.nodes)


@lru_cache(maxsize=None)
def _legendre(n):
    x, w = roots_legendre(n)
    return x, w


@lru_cache(maxsize=None)
def _jacobi_unit(n, a):
    """Gauss rule on [0, 1] for the weight ``v**a``."""
    x, w = roots_jacobi(n, 0.0, a)
    return (1.0 + x) / 2.0, w / 2.0 ** (a + 1.0)


@dataclass(frozen=True, eq=False)
class JacobiMeasure:
    """Probability measure with density ``Z^-1 (1-t)^beta f(t)`` on ``[l, 1]``.

    Instances are immutable; quadrature rules and the sampling table are
    computed lazily and cached on the instance.
    """

    beta: float
    l: float
    profile: Profile = field(default_factory=Profile)
    quad_order: int = 256
    Z: float = field(init=False)

    def __post_init__(self):
        if not self.beta > -1:
            raise ParameterError(f"beta must exceed -1, got {self.beta}")
        if not 0 < self.l < 1:
            raise ParameterError(f"left endpoint must lie in (0, 1), got {self.l}")
        if self.quad_order < 2:
            raise ParameterError("quad_order must be at least 2")
        rule = self._jacobi_rule(0)
        f = self.profile(rule.nodes)
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise DomainError(f"profile {self.profile.spec()} is not positive on [{self.l}, 1]")
        object.__setattr__(self, "Z", float(np.dot(rule.weights, f)))

    # -- quadrature -----------------------------------------------------

    def _jacobi_rule(self, singular_power):
        """Raw Gauss-Jacobi rule for ``(1-t)^(beta-k)`` on [l, 1] (no density)."""
        cache = self.__dict__.setdefault("_raw_rules", {})
        if singular_power not in cache:
            alpha = self.beta - singular_power
            if not alpha > -1:
                raise ParameterError(
                    f"(1-t)^-{singular_power} is not integrable against beta={self.beta}"
                )
            x, w = roots_jacobi(self.quad_order, alpha, 0.0)
            half = (1.0 - self.l) / 2.0
            nodes = self.l + half * (1.0 + x)
            cache[singular_power] = QuadratureRule(nodes, w * half ** (alpha + 1.0))
        return cache[singular_power]

    def raw_rule(self) -> QuadratureRule:
        """Rule for the bare weight ``(1-t)^beta``; weights sum to its mass."""
        return self._jacobi_rule(0)

    def rule(self, singular_power: int = 0) -> QuadratureRule:
        """Measure-weighted rule: ``sum(w * g(t) * (1-t)**-k)`` approximates ``∫ g dν``.

        With ``singular_power = k`` the factor ``(1-t)^-k`` is moved from
        the integrand into the Gauss-Jacobi weight, so the rule is exact
        in the sense of integrating ``g (1-t)^-k`` for smooth ``g``.
        """
        cache = self.__dict__.setdefault("_rules", {})
        if singular_power not in cache:
            raw = self._jacobi_rule(singular_power)
            cache[singular_power] = QuadratureRule(
                raw.nodes, raw.weights * self.profile(raw.nodes) / self.Z
            )
        return cache[singular_power]

    def integrate(self, g: Callable, singular_power: int = 0) -> float:
        """``∫ g(t) dν(t)``.

        If ``g`` diverges like ``(1-t)^-k`` at the right endpoint pass
        ``singular_power=k``; ``g`` is then multiplied by ``(1-t)^k`` at the
        nodes and integrated against ``(1-t)^(beta-k)``.
        """
        rule = self.rule(singular_power)
        t = rule.nodes
        vals = np.broadcast_to(np.asarray(g(t)), t.shape)
        if singular_power:
            vals = vals * (1.0 - t) ** singular_power
        if not np.all(np.isfinite(vals)):
            raise EvaluationError("integrand is not finite on the quadrature nodes")
        return complex(np.dot(rule.weights, vals)) if np.iscomplexobj(vals) else float(
            np.dot(rule.weights, vals)
        )

    def cauchy_rule(self, s: complex) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and measure weights for integrands with a pole at ``t = s``.

        Panels grow geometrically away from the point of ``[l, 1]`` closest
        to ``s``, starting at the pole distance, so every panel sees the pole
        at least one half-width away. The panel touching ``t = 1`` uses a
        Gauss-Jacobi rule to absorb ``(1-t)^beta``. Far from the support the
        global rule is returned.
        """
        l = self.l
        t0 = min(max(s.real, l), 1.0)
        dist = abs(complex(s) - t0)
        if dist >= _FAR:
            r = self.rule(0)
            return r.nodes, r.weights
        eps = max(dist, 1e-15)
        left, right = [], []
        k = 0
        while t0 - eps * 2.0**k > l:
            left.append(t0 - eps * 2.0**k)
            k += 1
        k = 0
        while t0 + eps * 2.0**k < 1.0:
            right.append(t0 + eps * 2.0**k)
            k += 1
        pts = [l] + left[::-1] + ([t0] if l < t0 < 1.0 else []) + right + [1.0]
        # a sliver next to an endpoint would make its neighbour see the
        # endpoint from too close; fold it into the neighbour
        if len(pts) > 3 and pts[1] - pts[0] < 0.5 * (pts[2] - pts[1]):
            del pts[1]
        if len(pts) > 3 and pts[-1] - pts[-2] < 0.5 * (pts[-2] - pts[-3]):
            del pts[-2]
        pts = np.asarray(pts)
        a, b = pts[:-2], pts[1:-1]
        x, w = _legendre(_PANEL_ORDER)
        half = (b - a)[:, None] / 2.0
        t_in = ((a + b)[:, None] / 2.0 + half * x).ravel()
        w_in = (half * w).ravel() * (1.0 - t_in) ** self.beta
        width = 1.0 - pts[-2]
        v, wj = _jacobi_unit(_PANEL_ORDER, float(self.beta))
        t_end = 1.0 - width * v
        w_end = wj * width ** (self.beta + 1.0)
        nodes = np.concatenate([t_in, t_end[::-1]])
        weights = np.concatenate([w_in, w_end[::-1]])
        return nodes, weights * self.profile(nodes) / self.Z

    # -- pointwise ------------------------------------------------------

    def density(self, t):
        """``Z^-1 (1-t)^beta f(t)`` inside ``[l, 1]``, 0 outside."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.l) & (t <= 1.0)
        tc = np.where(inside, t, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (1.0 - tc) ** self.beta * self.profile(tc) / self.Z
        out = np.where(inside, val, 0.0)
        return float(out) if out.ndim == 0 else out

    def edge_limit(self) -> float:
        """``lim_{t->1} density(t) / (1-t)^beta = f(1) / Z``."""
        return float(self.profile(1.0)) / self.Z

    def mean(self) -> float:
        return self.integrate(lambda t: t)

    def tail_probability(self, x: float) -> float:
        """``ν([1-x, 1])`` for ``0 <= x <= 1-l``."""
        if not -1e-15 <= x <= 1.0 - self.l + 1e-15:
            raise ParameterError(f"x must lie in [0, {1 - self.l}], got {x}")
        x = min(max(x, 0.0), 1.0 - self.l)
        if x == 0.0:
            return 0.0
        v, wj = _jacobi_unit(64, float(self.beta))
        val = x ** (self.beta + 1.0) * np.dot(wj, self.profile(1.0 - x * v)) / self.Z
        return float(min(val, 1.0))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        x = np.clip(1.0 - t, 0.0, 1.0 - self.l)
        v, wj = _jacobi_unit(64, float(self.beta))
        tails = x ** (self.beta + 1.0) * (self.profile(1.0 - np.multiply.outer(x, v)) @ wj) / self.Z
        out = 1.0 - np.minimum(tails, 1.0)
        return float(out) if out.ndim == 0 else out

    # -- sampling -------------------------------------------------------

    @cached_property
    def _inverse_tail(self):
        # Tabulate the tail mass G(x) = ν([1-x, 1]) and interpolate x as a
        # function of y = G^(1/(beta+1)), which is close to linear at x = 0,
        # so the extreme order statistics are resolved.
        n = _CDF_TABLE_SIZE
        xs = np.linspace(0.0, 1.0 - self.l, n)
        v, wj = _jacobi_unit(16, float(self.beta))
        first = xs[1] ** (self.beta + 1.0) * np.dot(wj, self.profile(1.0 - xs[1] * v))
        gx, gw = _legendre(8)
        a, b = xs[1:-1], xs[2:]
        half = (b - a)[:, None] / 2.0
        u = (a + b)[:, None] / 2.0 + half * gx
        cells = np.sum(half * gw * u**self.beta * self.profile(1.0 - u), axis=1)
        G = np.concatenate([[0.0, first], first + np.cumsum(cells)]) / self.Z
        G = G / G[-1]
        y = G ** (1.0 / (self.beta + 1.0))
        return PchipInterpolator(y, xs), xs, G

    def sample(self, count: int, seed=None) -> np.ndarray:
        """Draw ``count`` i.i.d. points from the measure.

        ``seed`` may be an integer, a :class:`numpy.random.SeedSequence` or a
        :class:`numpy.random.Generator`; the same seed always gives the same
        draws.
        """
        if count < 0:
            raise ParameterError("count must be non-negative")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if count == 0:
            return np.empty(0)
        interp = self._inverse_tail[0]
        y = rng.random(count) ** (1.0 / (self.beta + 1.0))
        x = np.clip(interp(y), 0.0, 1.0 - self.l)
        return 1.0 - x

    def tabulated_cdf(self):
        """``(t, F(t))`` on the sampling table, increasing in ``t``."""
        _, xs, G = self._inverse_tail
        return (1.0 - xs)[::-1], (1.0 - G)[::-1]

    def spec(self) -> dict:
        return {
            "beta": self.beta,
            "l": self.l,
            "profile": self.profile.spec(),
            "quad_order": self.quad_order,
        }


def build_measure(beta: float, l: float, profile="const", quad_order: int = 256) -> JacobiMeasure:
    """Construct a :class:`JacobiMeasure`; ``profile`` may be a string spec."""
    if isinstance(profile, str):
        profile = Profile.parse(profile)
    return JacobiMeasure(float(beta), float(l), profile, int(quad_order))


PRESETS = {
    "f1": dict(beta=3.0, l=0.1, profile="exp"),
    "f2": dict(beta=0.5, l=0.1, profile="exp"),
}


def preset(name: str, quad_order: int = 256) -> JacobiMeasure:
    try:
        kw = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown measure preset {name!r}") from None
    return build_measure(quad_order=quad_order, **kw)


def parse_kv_lines(lines: Sequence[str]) -> dict:
    out = {}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def measure_from_spec(spec) -> JacobiMeasure:
    """Build a measure from a preset name, a config file path, or a mapping.

    Mappings and files use the keys ``beta``, ``l``, ``profile`` and
    ``quad_order``; ``profile`` is ``const``, ``exp`` or ``poly:c0,c1,...``.
    """
    if isinstance(spec, JacobiMeasure):
        return spec
    if isinstance(spec, str):
        if spec in PRESETS:
            return preset(spec)
        path = Path(spec)
        if not path.is_file():
            raise ParameterError(f"{spec!r} is neither a preset nor a readable file")
        spec = parse_kv_lines(path.read_text(encoding="utf-8").splitlines())
    spec = dict(spec)
    if "preset" in spec:
        return preset(spec["preset"], int(spec.get("quad_order", 256)))
    missing = {"beta", "l"} - spec.keys()
    if missing:
        raise ParameterError(f"measure spec is missing {sorted(missing)}")
    try:
        return build_measure(
            float(spec["beta"]),
            float(spec["l"]),
            spec.get("profile", "const"),
            int(spec.get("quad_order", 256)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad measure spec: {exc}") from exc


def ks_to_tabulated(m: JacobiMeasure, samples) -> float:
    """Kolmogorov distance between ``samples`` and the measure's CDF."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    F = m.cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
