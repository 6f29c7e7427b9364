"""Delay-kernel representations on [0, tau] and the quadrature machinery around them.

Three interchangeable representations are supported:

* ``ClosedForm`` -- the exact kernel of the constant-coefficient system,
  assembled from the entire series of :mod:`hyperstab.special`;
* ``Truncated`` -- the degree ``2p+3`` polynomial obtained by cutting both
  series after ``p+1`` terms, stored as exact monomial coefficients;
* ``Polynomial`` -- an arbitrary user-supplied polynomial kernel.

Monomial coefficients are always ascending (``coeffs[k]`` multiplies ``nu**k``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq

from .params import DerivedConstants
from .special import DEFAULT_SERIES_CONFIG, SeriesConfig, a0, a0_prime, a2, a2_prime

MAX_TRUNCATION_ORDER = 12


class KernelError(ValueError):
    """Invalid kernel construction or use."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to converge."""


@dataclass(frozen=True)
class QuadratureConfig:
    base_nodes: int = 64
    max_doublings: int = 6
    rel_tol: float = 1e-12

    def __post_init__(self) -> None:
        if self.base_nodes < 8:
            raise ValueError("base_nodes must be at least 8")


DEFAULT_QUADRATURE = QuadratureConfig()


@dataclass(frozen=True)
class ClosedForm:
    """Exact kernel of the constant-coefficient system."""

    consts: DerivedConstants

    def __post_init__(self) -> None:
        if self.consts.tau <= 0:
            raise KernelError("tau must be positive")


@dataclass(frozen=True)
class Truncated:
    """Polynomial truncation of order ``p`` (degree ``2p+3``)."""

    p: int
    consts: DerivedConstants
    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.p < 0:
            raise KernelError("truncation order must be nonnegative")
        if len(self.coeffs) != 2 * self.p + 4:
            raise KernelError(
                f"truncation of order {self.p} needs {2 * self.p + 4} coefficients, "
                f"got {len(self.coeffs)}"
            )


@dataclass(frozen=True)
class Polynomial:
    """Explicit polynomial kernel on [0, tau]."""

    tau: float
    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise KernelError("tau must be positive")
        if len(self.coeffs) == 0:
            raise KernelError("polynomial kernel needs at least one coefficient")


KernelSpec = Union[ClosedForm, Truncated, Polynomial]


@dataclass(frozen=True)
class IdeProblem:
    """A scalar integral difference relation: delay, principal coefficient, kernel."""

    tau: float
    xi: float
    kernel: KernelSpec

    def __post_init__(self) -> None:
        kt = kernel_tau(self.kernel)
        if abs(kt - self.tau) > 1e-12 * max(1.0, abs(self.tau)):
            raise KernelError(f"problem delay {self.tau} does not match kernel delay {kt}")


def kernel_tau(k: KernelSpec) -> float:
    if isinstance(k, (ClosedForm, Truncated)):
        return k.consts.tau
    return k.tau


def poly_coeffs(k: KernelSpec) -> tuple[float, ...] | None:
    """Monomial coefficients for polynomial-backed kernels, else ``None``."""
    if isinstance(k, (Truncated, Polynomial)):
        return tuple(k.coeffs)
    return None


# ---------------------------------------------------------------------------
# evaluation


def _closed_point(c: DerivedConstants, nu: float, cfg: SeriesConfig) -> float:
    h = c.R * nu * (c.tau - nu) / c.tau**2
    d = c.R * (c.tau - nu * c.b)
    return (c.a / c.tau + d / c.tau**2) * a0(h, cfg) + (d / c.tau**2) * a2(h, cfg)


def _closed_point_prime(c: DerivedConstants, nu: float, cfg: SeriesConfig) -> float:
    h = c.R * nu * (c.tau - nu) / c.tau**2
    hp = c.R * (c.tau - 2.0 * nu) / c.tau**2
    d = c.R * (c.tau - nu * c.b)
    dp = -c.R * c.b
    return (
        (dp / c.tau**2) * (a0(h, cfg) + a2(h, cfg))
        + ((c.a / c.tau + d / c.tau**2) * a0_prime(h, cfg) + (d / c.tau**2) * a2_prime(h, cfg)) * hp
    )


def _check_domain(k: KernelSpec, nu: np.ndarray) -> None:
    tau = kernel_tau(k)
    slack = 1e-12 * max(1.0, tau)
    if np.any(nu < -slack) or np.any(nu > tau + slack):
        raise KernelError(f"nu outside [0, {tau}]")


def eval_N(k: KernelSpec, nu, series_cfg: SeriesConfig = DEFAULT_SERIES_CONFIG):
    """Kernel value at ``nu`` (scalar or array) for any representation."""
    arr = np.asarray(nu, dtype=float)
    _check_domain(k, np.atleast_1d(arr))
    coeffs = poly_coeffs(k)
    if coeffs is not None:
        out = npoly.polyval(arr, np.asarray(coeffs))
    else:
        flat = np.atleast_1d(arr).ravel()
        out = np.fromiter(
            (_closed_point(k.consts, float(x), series_cfg) for x in flat),
            dtype=float,
            count=flat.size,
        ).reshape(np.atleast_1d(arr).shape)
    if arr.ndim == 0:
        return float(out)
    return out


def eval_N_prime(k: KernelSpec, nu, series_cfg: SeriesConfig = DEFAULT_SERIES_CONFIG):
    """Kernel derivative at ``nu``; exact for polynomials, series-based otherwise."""
    arr = np.asarray(nu, dtype=float)
    _check_domain(k, np.atleast_1d(arr))
    coeffs = poly_coeffs(k)
    if coeffs is not None:
        out = npoly.polyval(arr, npoly.polyder(np.asarray(coeffs)))
    else:
        flat = np.atleast_1d(arr).ravel()
        out = np.fromiter(
            (_closed_point_prime(k.consts, float(x), series_cfg) for x in flat),
            dtype=float,
            count=flat.size,
        ).reshape(np.atleast_1d(arr).shape)
    if arr.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# truncation


def truncate(consts: DerivedConstants, p: int) -> Truncated:
    """Exact monomial coefficients of the order-``p`` truncation.

    Both series are cut after their first ``p+1`` terms; the products with the
    linear prefactors are expanded symbolically, and per-monomial contributions
    are combined with exact (fsum) accumulation.
    """
    if p < 0:
        raise KernelError("truncation order must be nonnegative")
    if p > MAX_TRUNCATION_ORDER:
        raise KernelError(
            f"truncation order {p} exceeds the supported cap {MAX_TRUNCATION_ORDER}"
        )
    tau, a_, big_r, b = consts.tau, consts.a, consts.R, consts.b
    h = np.array([0.0, big_r / tau, -big_r / tau**2])
    base = np.array([(a_ + big_r) / tau, -big_r * b / tau**2])
    lin = np.array([big_r / tau, -big_r * b / tau**2])

    n_coeffs = 2 * p + 4
    pieces: list[list[float]] = [[] for _ in range(n_coeffs)]

    def _accumulate(poly: np.ndarray) -> None:
        for i, c in enumerate(poly):
            pieces[i].append(float(c))

    h_pow = np.array([1.0])
    for j in range(p + 1):
        c1 = (-1.0) ** j / math.factorial(j) ** 2
        _accumulate(npoly.polymul(base, c1 * h_pow))
        c2 = (-1.0) ** j / (math.factorial(j) * math.factorial(j + 2))
        _accumulate(npoly.polymul(lin, npoly.polymul(c2 * h_pow, h)))
        h_pow = npoly.polymul(h_pow, h)

    coeffs = tuple(math.fsum(terms) for terms in pieces)
    return Truncated(p=p, consts=consts, coeffs=coeffs)


def derivatives_at_tau(k: Truncated, max_order: int = 3) -> tuple[float, ...]:
    """Exact values N(tau), N'(tau), ..., up to ``max_order`` for a truncation."""
    if not isinstance(k, Truncated):
        raise KernelError("derivatives_at_tau requires a Truncated kernel")
    c = np.asarray(k.coeffs)
    out = []
    for _ in range(max_order + 1):
        out.append(float(npoly.polyval(k.consts.tau, c)))
        c = npoly.polyder(c)
    return tuple(out)


# ---------------------------------------------------------------------------
# quadrature

_gl_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _gl_cache:
        x, w = np.polynomial.legendre.leggauss(n)
        _gl_cache[n] = (x, w)
    return _gl_cache[n]


def gauss_legendre(fn: Callable[[np.ndarray], np.ndarray], a: float, b: float, n: int) -> float:
    x, w = _gl_nodes(n)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    return float(half * np.sum(w * fn(mid + half * x)))


def adaptive_gauss_legendre(
    fn: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    qc: QuadratureConfig = DEFAULT_QUADRATURE,
) -> float:
    """Node-doubling Gauss-Legendre until two successive estimates agree."""
    n = qc.base_nodes
    prev = gauss_legendre(fn, a, b, n)
    for _ in range(qc.max_doublings):
        n *= 2
        cur = gauss_legendre(fn, a, b, n)
        if abs(cur - prev) <= qc.rel_tol * (1e-16 + max(abs(cur), abs(prev))):
            return cur
        prev = cur
    raise QuadratureError(
        f"quadrature did not converge after {qc.max_doublings} doublings "
        f"(last estimates {prev!r}, {cur!r})"
    )


def _sign_change_points(
    fn: Callable[[np.ndarray], np.ndarray], a: float, b: float, n_scan: int = 512
) -> list[float]:
    """Locate sign changes of ``fn`` on [a, b] by grid scan plus bisection."""
    xs = np.linspace(a, b, n_scan + 1)
    vals = fn(xs)
    cuts = []
    for i in range(n_scan):
        v0, v1 = vals[i], vals[i + 1]
        if v0 == 0.0:
            cuts.append(float(xs[i]))
        elif v0 * v1 < 0.0:
            cuts.append(float(brentq(lambda t: float(fn(np.array([t]))[0]), xs[i], xs[i + 1], xtol=1e-14)))
    if vals[-1] == 0.0:
        cuts.append(float(xs[-1]))
    return sorted(set(cuts))


def _piecewise_abs_integral(
    fn: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    qc: QuadratureConfig,
) -> float:
    cuts = [a, *(c for c in _sign_change_points(fn, a, b) if a < c < b), b]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 1e-15 * (b - a):
            continue
        total += abs(adaptive_gauss_legendre(fn, lo, hi, qc))
    return total


def _poly_abs_integral(coeffs: Sequence[float], tau: float, weight_power: int = 0) -> float:
    """Exact integral of nu^w * |poly(nu)| over [0, tau] via root splitting."""
    c = np.asarray(coeffs, dtype=float)
    if not np.any(c != 0.0):
        return 0.0
    weighted = np.concatenate([np.zeros(weight_power), c])
    anti = npoly.polyint(weighted)
    roots = npoly.polyroots(c)
    cuts = sorted(
        float(r.real)
        for r in roots
        if abs(r.imag) < 1e-10 * max(1.0, abs(r)) and 1e-14 * tau < r.real < tau * (1 - 1e-14)
    )
    pts = [0.0, *cuts, tau]
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        piece = float(npoly.polyval(hi, anti) - npoly.polyval(lo, anti))
        total += abs(piece)
    return total


# ---------------------------------------------------------------------------
# integrals and distances


def integral_N(
    k: KernelSpec,
    qc: QuadratureConfig = DEFAULT_QUADRATURE,
    series_cfg: SeriesConfig = DEFAULT_SERIES_CONFIG,
    force_quadrature: bool = False,
) -> float:
    """Integral of the kernel over [0, tau].

    Polynomial-backed kernels integrate through the exact antiderivative;
    the closed form goes through adaptive quadrature.  ``force_quadrature``
    lets tests exercise the quadrature path on polynomials too.
    """
    coeffs = poly_coeffs(k)
    tau = kernel_tau(k)
    if coeffs is not None and not force_quadrature:
        return float(npoly.polyval(tau, npoly.polyint(np.asarray(coeffs))))
    return adaptive_gauss_legendre(lambda x: eval_N(k, x, series_cfg), 0.0, tau, qc)


def abs_integral(
    k: KernelSpec,
    qc: QuadratureConfig = DEFAULT_QUADRATURE,
    weight_power: int = 0,
    derivative: int = 0,
    series_cfg: SeriesConfig = DEFAULT_SERIES_CONFIG,
) -> float:
    """Integral of nu^w * |N(nu)| (or |N'| with ``derivative=1``) over [0, tau]."""
    if weight_power not in (0, 1):
        raise ValueError("weight_power must be 0 or 1")
    if derivative not in (0, 1):
        raise ValueError("derivative must be 0 or 1")
    tau = kernel_tau(k)
    coeffs = poly_coeffs(k)
    if coeffs is not None:
        c = np.asarray(coeffs)
        if derivative:
            c = npoly.polyder(c)
        return _poly_abs_integral(c, tau, weight_power)
    base = eval_N_prime if derivative else eval_N

    def fn(x: np.ndarray) -> np.ndarray:
        v = np.asarray(base(k, x, series_cfg))
        return v * x**weight_power if weight_power else v

    # split at sign changes of the undecorated function, then integrate |.|
    raw = lambda x: np.asarray(base(k, x, series_cfg))  # noqa: E731
    cuts = [0.0, *(c for c in _sign_change_points(raw, 0.0, tau) if 0.0 < c < tau), tau]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 1e-15 * tau:
            continue
        total += abs(adaptive_gauss_legendre(fn, lo, hi, qc))
    return total


def l1_distance(
    k1: KernelSpec,
    k2: KernelSpec,
    qc: QuadratureConfig = DEFAULT_QUADRATURE,
    series_cfg: SeriesConfig = DEFAULT_SERIES_CONFIG,
) -> float:
    """L1 distance of two kernels sharing the same delay."""
    t1, t2 = kernel_tau(k1), kernel_tau(k2)
    if abs(t1 - t2) > 1e-12 * max(1.0, t1, t2):
        raise KernelError(f"kernel delay mismatch: {t1} vs {t2}")
    c1, c2 = poly_coeffs(k1), poly_coeffs(k2)
    if c1 is not None and c2 is not None:
        n = max(len(c1), len(c2))
        d = np.zeros(n)
        d[: len(c1)] += c1
        d[: len(c2)] -= c2
        return _poly_abs_integral(d, t1)

    def diff(x: np.ndarray) -> np.ndarray:
        return np.asarray(eval_N(k1, x, series_cfg)) - np.asarray(eval_N(k2, x, series_cfg))

    return _piecewise_abs_integral(diff, 0.0, t1, qc)


# ---------------------------------------------------------------------------
# JSON interchange


def kernel_to_dict(k: KernelSpec) -> dict:
    if isinstance(k, ClosedForm):
        return {
            "type": "closed_form",
            "tau": k.consts.tau,
            "coeffs": None,
            "params": _consts_to_dict(k.consts),
        }
    if isinstance(k, Truncated):
        return {
            "type": "truncated",
            "tau": k.consts.tau,
            "p": k.p,
            "coeffs": list(k.coeffs),
            "params": _consts_to_dict(k.consts),
        }
    return {"type": "polynomial", "tau": k.tau, "coeffs": list(k.coeffs)}


def kernel_from_dict(d: dict) -> KernelSpec:
    kind = d.get("type")
    if kind == "closed_form":
        return ClosedForm(consts=_consts_from_dict(d["params"]))
    if kind == "truncated":
        return Truncated(
            p=int(d["p"]),
            consts=_consts_from_dict(d["params"]),
            coeffs=tuple(float(c) for c in d["coeffs"]),
        )
    if kind == "polynomial":
        return Polynomial(tau=float(d["tau"]), coeffs=tuple(float(c) for c in d["coeffs"]))
    raise KernelError(f"unknown kernel type {kind!r}")


def save_kernel(k: KernelSpec, path: str, xi: float | None = None) -> None:
    d = kernel_to_dict(k)
    if xi is not None:
        d["xi"] = xi
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_kernel(path: str) -> tuple[KernelSpec, float | None]:
    """Load a kernel file; returns the kernel and the embedded xi, if any."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    k = kernel_from_dict(d)
    xi = d.get("xi")
    if xi is None and isinstance(k, (ClosedForm, Truncated)):
        xi = k.consts.xi
    return k, (None if xi is None else float(xi))


def _consts_to_dict(c: DerivedConstants) -> dict:
    return {"tau": c.tau, "xi": c.xi, "a": c.a, "R": c.R, "b": c.b}


def _consts_from_dict(d: dict) -> DerivedConstants:
    return DerivedConstants(
        tau=float(d["tau"]),
        xi=float(d["xi"]),
        a=float(d["a"]),
        R=float(d["R"]),
        b=float(d["b"]),
    )
