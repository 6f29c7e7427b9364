"""The characteristic function of the integral difference relation.

For delay tau, principal coefficient xi and kernel N the characteristic
function is

    Delta(s) = 1 - xi * exp(-s*tau) - integral_0^tau N(nu) exp(-s*nu) d nu.

Polynomial-backed kernels evaluate the Laplace integral through exact
exponential moments (uniformly accurate in s, see :func:`_exp_moments`);
the closed-form kernel goes through adaptive Gauss-Legendre quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as npoly

from .kernel import (
    DEFAULT_QUADRATURE,
    ClosedForm,
    IdeProblem,
    KernelError,
    KernelSpec,
    QuadratureConfig,
    QuadratureError,
    Truncated,
    _gl_nodes,
    abs_integral,
    eval_N,
    integral_N,
    kernel_tau,
    poly_coeffs,
    truncate,
)
from .params import HyperbolicSystem, derive_constants
from .special import DEFAULT_SERIES_CONFIG, SeriesConfig

# Below this |s| the quasipolynomial numerator form is numerically meaningless
# (removable singularity at the origin); evaluation falls back to moments.
SMALL_S_SWITCH = 1e-8

_CHUNK = 4096


def _exp_moments(z: np.ndarray, order: int) -> np.ndarray:
    """g_k(z) = integral_0^1 t^k exp(-z t) dt for k = 0..order, shape (order+1, len(z)).

    The by-parts recurrence g_k = (k g_{k-1} - exp(-z))/z amplifies errors by
    k/|z| per step, so it is only run upward while k <= |z|.  Remaining indices
    are filled downward (amplification |z|/k <= 1) from a hypergeometric-series
    seed at k = order, whose terms decay immediately because order+2 > |z|
    whenever the downward branch is active.  The combination is uniformly
    accurate over the whole complex plane at double precision.
    """
    z = np.asarray(z, dtype=complex)
    n = z.shape[0]
    g = np.zeros((order + 1, n), dtype=complex)
    E = np.exp(-z)
    az = np.abs(z)
    k_up = np.minimum(order, az.astype(int))

    small = az < 0.5
    if np.any(small):
        zs = z[small]
        total = np.ones_like(zs)
        term = np.ones_like(zs)
        for m in range(1, 19):
            term = term * (-zs) / m
            total = total + term / (m + 1)
        g[0, small] = total
    big = ~small
    if np.any(big):
        g[0, big] = (1.0 - E[big]) / z[big]

    for k in range(1, order + 1):
        mask = k_up >= k
        if np.any(mask):
            g[k, mask] = (k * g[k - 1, mask] - E[mask]) / z[mask]

    need = k_up < order
    if np.any(need):
        zn = z[need]
        term = np.ones_like(zn)
        total = np.ones_like(zn)
        for m in range(1, 400):
            term = term * (-zn) / (order + 1 + m)
            total = total + term
            if np.max(np.abs(term)) <= 1e-17 * (1.0 + np.max(np.abs(total))):
                break
        g[order, need] = total / (order + 1)
        for k in range(order, 0, -1):
            mask = need & (k_up < k - 1)
            if np.any(mask):
                g[k - 1, mask] = (z[mask] * g[k, mask] + E[mask]) / k
        # k_up + 1 row for 'need' elements with k_up == order - 1 is filled by
        # the loop above; the seed row itself was just written.
    return g


class CharFn:
    """Bundle of (tau, xi, kernel) with cached evaluation helpers."""

    def __init__(
        self,
        tau: float,
        xi: float,
        kernel: KernelSpec,
        qc: QuadratureConfig = DEFAULT_QUADRATURE,
        series_cfg: SeriesConfig = DEFAULT_SERIES_CONFIG,
    ) -> None:
        kt = kernel_tau(kernel)
        if abs(kt - tau) > 1e-12 * max(1.0, tau):
            raise KernelError(f"delay {tau} does not match kernel delay {kt}")
        self.tau = float(tau)
        self.xi = float(xi)
        self.kernel = kernel
        self.qc = qc
        self.series_cfg = series_cfg
        self._nodes: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @classmethod
    def from_system(cls, sys: HyperbolicSystem, **kw) -> "CharFn":
        c = derive_constants(sys)
        return cls(c.tau, c.xi, ClosedForm(c), **kw)

    @classmethod
    def truncated_from_system(cls, sys: HyperbolicSystem, p: int, **kw) -> "CharFn":
        c = derive_constants(sys)
        return cls(c.tau, c.xi, truncate(c, p), **kw)

    @classmethod
    def from_problem(cls, prob: IdeProblem, **kw) -> "CharFn":
        return cls(prob.tau, prob.xi, prob.kernel, **kw)

    @cached_property
    def kernel_l1(self) -> float:
        return abs_integral(self.kernel, self.qc, series_cfg=self.series_cfg)

    @cached_property
    def kernel_integral(self) -> float:
        return integral_N(self.kernel, self.qc, self.series_cfg)

    @cached_property
    def scale(self) -> float:
        """Natural magnitude of Delta; tolerances are taken relative to it."""
        return 1.0 + abs(self.xi) + self.kernel_l1

    def _weighted_nodes(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n not in self._nodes:
            x, w = _gl_nodes(n)
            pts = 0.5 * self.tau * (x + 1.0)
            wl = 0.5 * self.tau * w * np.asarray(eval_N(self.kernel, pts, self.series_cfg))
            self._nodes[n] = (pts, wl, wl * pts)
        return self._nodes[n]


def _as_complex_array(s) -> tuple[np.ndarray, bool]:
    arr = np.asarray(s, dtype=complex)
    return np.atleast_1d(arr).ravel(), arr.ndim == 0


def _laplace_quadrature(f: CharFn, s: np.ndarray, weighted: bool = False) -> np.ndarray:
    """integral_0^tau N(nu) exp(-s nu) d nu (times nu if ``weighted``) by node doubling."""
    n = f.qc.base_nodes
    prev = _laplace_fixed(f, s, n, weighted)
    for _ in range(f.qc.max_doublings):
        n *= 2
        cur = _laplace_fixed(f, s, n, weighted)
        err = np.max(np.abs(cur - prev) / (1.0 + np.abs(cur)))
        if err <= f.qc.rel_tol:
            return cur
        prev = cur
    raise QuadratureError(
        f"Laplace quadrature did not converge (last relative change {err:.3e})"
    )


def _laplace_fixed(f: CharFn, s: np.ndarray, n: int, weighted: bool) -> np.ndarray:
    pts, wl, wlx = f._weighted_nodes(n)
    wsel = wlx if weighted else wl
    out = np.empty(s.shape[0], dtype=complex)
    for lo in range(0, s.shape[0], _CHUNK):
        blk = s[lo : lo + _CHUNK]
        out[lo : lo + _CHUNK] = np.exp(-np.outer(blk, pts)) @ wsel
    return out


def _laplace_exact(f: CharFn, s: np.ndarray, weighted: bool = False) -> np.ndarray:
    coeffs = poly_coeffs(f.kernel)
    if coeffs is None:
        raise KernelError("exact Laplace path requires a polynomial-backed kernel")
    c = np.asarray(coeffs)
    tau = f.tau
    if weighted:
        c = np.concatenate([[0.0], c])  # multiply by nu
    order = len(c) - 1
    g = _exp_moments(s * tau, order)
    w = c * tau ** (np.arange(order + 1) + 1.0)
    return w @ g


def delta(f: CharFn, s, method: str = "auto"):
    """Characteristic-function value(s) at ``s`` (scalar or array).

    ``method`` selects the Laplace-integral evaluation: ``"exact"`` (moments;
    polynomial kernels only), ``"quadrature"``, or ``"auto"``.
    """
    sv, scalar = _as_complex_array(s)
    if method == "auto":
        method = "exact" if poly_coeffs(f.kernel) is not None else "quadrature"
    if method == "exact":
        lap = _laplace_exact(f, sv)
    elif method == "quadrature":
        lap = _laplace_quadrature(f, sv)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = 1.0 - f.xi * np.exp(-sv * f.tau) - lap
    return complex(out[0]) if scalar else out.reshape(np.shape(s))


def delta_prime(f: CharFn, s, method: str = "auto"):
    """Derivative of the characteristic function: tau*xi*e^(-s tau) + L'(s)."""
    sv, scalar = _as_complex_array(s)
    if method == "auto":
        method = "exact" if poly_coeffs(f.kernel) is not None else "quadrature"
    if method == "exact":
        lap1 = _laplace_exact(f, sv, weighted=True)
    elif method == "quadrature":
        lap1 = _laplace_quadrature(f, sv, weighted=True)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = f.tau * f.xi * np.exp(-sv * f.tau) + lap1
    return complex(out[0]) if scalar else out.reshape(np.shape(s))


def M_of(f: CharFn, omega, method: str = "auto"):
    """Real trace Re Delta(i omega)."""
    d = delta(f, 1j * np.asarray(omega, dtype=float), method)
    return float(np.real(d)) if np.ndim(omega) == 0 else np.real(d)


def S_of(f: CharFn, omega, method: str = "auto"):
    """Imaginary trace Im Delta(i omega); exactly zero at omega = 0."""
    d = delta(f, 1j * np.asarray(omega, dtype=float), method)
    return float(np.imag(d)) if np.ndim(omega) == 0 else np.imag(d)


@dataclass(frozen=True)
class QuasiPolyForm:
    """Numerator form Delta_p(s) = (P0num(s) + P1num(s) e^(-s tau)) / s^(2p+4).

    Coefficient tuples are ascending in s.  Valid away from s = 0; evaluation
    below ``SMALL_S_SWITCH`` silently switches to the moment path.
    """

    p0_num: tuple[float, ...]
    p1_num: tuple[float, ...]
    degree: int
    tau: float
    xi: float
    kernel_coeffs: tuple[float, ...]

    def eval(self, s):
        sv, scalar = _as_complex_array(s)
        out = np.empty_like(sv)
        small = np.abs(sv) < SMALL_S_SWITCH
        large = ~small
        if np.any(large):
            sl = sv[large]
            num = npoly.polyval(sl, np.asarray(self.p0_num)) + npoly.polyval(
                sl, np.asarray(self.p1_num)
            ) * np.exp(-sl * self.tau)
            out[large] = num / sl**self.degree
        if np.any(small):
            c = np.asarray(self.kernel_coeffs)
            order = len(c) - 1
            g = _exp_moments(sv[small] * self.tau, order)
            w = c * self.tau ** (np.arange(order + 1) + 1.0)
            out[small] = 1.0 - self.xi * np.exp(-sv[small] * self.tau) - w @ g
        return complex(out[0]) if scalar else out.reshape(np.shape(s))


def quasipoly_form(k: Truncated, xi: float) -> QuasiPolyForm:
    """Exact numerator polynomials of the truncated characteristic function.

    With n = 2p+3 and kernel coefficients a_0..a_n:

        P0num(s) = s^(n+1) - sum_{k=0}^{n} a_k k! s^(n-k)
        P1num(s) = -xi s^(n+1) + sum_{i=0}^{n} N_p^{(n-i)}(tau) s^i
    """
    if not isinstance(k, Truncated):
        raise KernelError("quasipoly_form requires a Truncated kernel")
    c = np.asarray(k.coeffs)
    n = len(c) - 1  # = 2p + 3
    tau = k.consts.tau

    p0 = np.zeros(n + 2)
    p0[n + 1] = 1.0
    fact = 1.0
    for j in range(n + 1):
        # a_j j! multiplies s^(n-j)
        p0[n - j] = -c[j] * fact
        fact *= j + 1

    p1 = np.zeros(n + 2)
    p1[n + 1] = -xi
    d = c.copy()
    for m in range(n + 1):
        # m-th derivative at tau multiplies s^(n-m)
        p1[n - m] = float(npoly.polyval(tau, d))
        d = npoly.polyder(d)

    return QuasiPolyForm(
        p0_num=tuple(p0),
        p1_num=tuple(p1),
        degree=n + 1,
        tau=tau,
        xi=float(xi),
        kernel_coeffs=tuple(k.coeffs),
    )
