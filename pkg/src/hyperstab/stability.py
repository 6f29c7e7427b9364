"""Stability decision pipeline for the integral difference relation.

The pipeline mirrors the spectral counting argument: a sign test at the
origin, a provably sufficient frequency window, enumeration of the real-trace
zeros, the alternating signed count over them, and the final verdict.  The
count equals the number of open-right-half-plane roots of the characteristic
function whenever the hypotheses (principal coefficient inside the unit disc,
positive value at the origin, no imaginary-axis roots) hold.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .charfn import CharFn, M_of, S_of, delta
from .kernel import (
    ClosedForm,
    KernelError,
    Truncated,
    abs_integral,
    derivatives_at_tau,
    eval_N,
    integral_N,
    l1_distance,
    truncate,
)

ORIGIN_TOL = 1e-10
IMAG_ROOT_TOL_FACTOR = 1e-8
TANGENT_TOL_FACTOR = 1e-9


class Verdict(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL_IMAGINARY_ROOT = "marginal_imaginary_root"
    INCONCLUSIVE = "inconclusive"


class HypothesisError(ValueError):
    """A closed-form test was invoked outside its hypotheses."""


class ImaginaryAxisRootError(ValueError):
    """The alternating count is undefined: a real-trace zero sits on the spectrum."""


@dataclass(frozen=True)
class MZero:
    """A positive zero of the real trace M, with its multiplicity flag and S value."""

    omega: float
    multiplicity: int
    s_value: float


@dataclass(frozen=True)
class NecessaryTestResult:
    passed: bool
    boundary: bool
    delta_at_zero: float


@dataclass(frozen=True)
class FrequencyWindow:
    """Frequency bound beyond which the real trace provably stays positive."""

    omega_max: float
    derivation: dict


@dataclass
class MZeroScan:
    zeros: list[MZero]  # ordered decreasing in omega
    inconclusive_reason: Optional[str]
    n_grid: int


@dataclass
class StabilityReport:
    delta_at_zero: float
    integral_condition_holds: bool
    principal_part_ok: bool
    m_zeros: list[MZero]
    gamma: Optional[int]
    imaginary_roots: list[float]
    verdict: Verdict
    reason: str = ""
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d

    def to_json(self, **kw) -> str:
        kw.setdefault("sort_keys", True)
        kw.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kw)


def necessary_test(f: CharFn) -> NecessaryTestResult:
    """Sign test at the origin: a nonpositive value rules out exponential stability."""
    d0 = float(np.real(delta(f, 0.0)))
    if abs(d0) <= ORIGIN_TOL:
        return NecessaryTestResult(passed=False, boundary=True, delta_at_zero=d0)
    return NecessaryTestResult(passed=d0 > 0.0, boundary=False, delta_at_zero=d0)


def frequency_window(f: CharFn) -> FrequencyWindow:
    """Return omega_max with M(omega) > 0 guaranteed for omega > omega_max.

    Integration by parts bounds the oscillatory kernel integral by
    (|N(0)| + |N(tau)| + ||N'||_L1)/omega, so the real trace is at least
    1 - |xi| - that tail.  A factor-2 safety margin and a 4*pi/tau floor are
    applied on top.
    """
    if abs(f.xi) >= 1.0:
        raise HypothesisError("frequency window requires |xi| < 1")
    n0 = abs(float(eval_N(f.kernel, 0.0, f.series_cfg)))
    ntau = abs(float(eval_N(f.kernel, f.tau, f.series_cfg)))
    nprime_l1 = abs_integral(f.kernel, f.qc, derivative=1, series_cfg=f.series_cfg)
    c_tail = n0 + ntau + nprime_l1
    floor = 4.0 * math.pi / f.tau
    omega_max = max(floor, 2.0 * c_tail / (1.0 - abs(f.xi)))
    return FrequencyWindow(
        omega_max=omega_max,
        derivation={
            "n_at_0": n0,
            "n_at_tau": ntau,
            "nprime_l1": nprime_l1,
            "tail_constant": c_tail,
            "xi": f.xi,
            "safety_factor": 2.0,
            "floor": floor,
        },
    )


def _refine_grid(f: CharFn, omegas: np.ndarray, vals: np.ndarray, m_scale: float,
                 max_refine: int, cap: int) -> tuple[np.ndarray, np.ndarray]:
    for _ in range(max_refine):
        pair_scale = np.maximum(np.abs(vals[:-1]), np.abs(vals[1:]))
        pair_scale = np.maximum(pair_scale, 0.02 * m_scale)
        needs = np.abs(np.diff(vals)) > 0.25 * pair_scale
        if not needs.any() or omegas.size > cap:
            break
        mids = 0.5 * (omegas[:-1][needs] + omegas[1:][needs])
        mv = np.asarray(M_of(f, mids))
        omegas = np.concatenate([omegas, mids])
        vals = np.concatenate([vals, mv])
        order = np.argsort(omegas)
        omegas, vals = omegas[order], vals[order]
    return omegas, vals


def find_M_zeros(
    f: CharFn,
    window: FrequencyWindow,
    base_step: Optional[float] = None,
    max_refine: int = 8,
    grid_cap: int = 200_000,
) -> MZeroScan:
    """Enumerate the positive zeros of the real trace below the window bound.

    A uniform grid (step <= min(tau,1)/64) is refined wherever M jumps by more
    than a quarter of the local scale; bracketed sign changes are polished by
    bisection/secant, and sign-preserving dips of |M| below the tangent
    tolerance are recorded as multiplicity-2 zeros.
    """
    m_scale = f.scale
    h = base_step if base_step is not None else min(f.tau, 1.0) / 64.0
    omegas = np.concatenate([[0.0, h / 1024.0, h / 64.0, h / 8.0],
                             np.arange(h, window.omega_max + h, h)])
    vals = np.asarray(M_of(f, omegas))
    omegas, vals = _refine_grid(f, omegas, vals, m_scale, max_refine, grid_cap)

    tangent_tol = TANGENT_TOL_FACTOR * m_scale
    zeros: list[tuple[float, int]] = []
    inconclusive: Optional[str] = None

    def m_scalar(w: float) -> float:
        return float(M_of(f, w))

    # sign changes
    for i in range(omegas.size - 1):
        v0, v1 = vals[i], vals[i + 1]
        if v0 == 0.0:
            if omegas[i] > 0.0:
                zeros.append((float(omegas[i]), 1))
            continue
        if v0 * v1 < 0.0:
            root = brentq(m_scalar, omegas[i], omegas[i + 1], xtol=1e-12, rtol=8e-16)
            if root > 0.0:
                zeros.append((float(root), 1))

    # tangential (even-multiplicity) zeros: local minima of |M| without sign change
    absvals = np.abs(vals)
    for i in range(1, omegas.size - 1):
        if vals[i - 1] * vals[i] <= 0.0 or vals[i] * vals[i + 1] <= 0.0:
            continue
        if not (absvals[i] < absvals[i - 1] and absvals[i] <= absvals[i + 1]):
            continue
        if absvals[i] > 1e4 * tangent_tol:
            continue
        res = minimize_scalar(
            lambda w: m_scalar(w) ** 2,
            bounds=(float(omegas[i - 1]), float(omegas[i + 1])),
            method="bounded",
            options={"xatol": 1e-13},
        )
        w_star = float(res.x)
        m_star = m_scalar(w_star)
        if abs(m_star) < tangent_tol and w_star > 0.0:
            dh = 1e-4 * max(1.0, w_star)
            curv = (m_scalar(w_star + dh) - 2.0 * m_star + m_scalar(w_star - dh)) / dh**2
            if abs(curv) < 1e-6 * m_scale:
                inconclusive = (
                    f"tangential zero of M near omega={w_star:.6g} with vanishing "
                    "curvature; multiplicity undecidable"
                )
            zeros.append((w_star, 2))

    # flatness check on simple roots (possible odd multiplicity >= 3)
    checked: list[tuple[float, int]] = []
    for w, mult in zeros:
        if mult == 1:
            dh = 1e-6 * (1.0 + w)
            slope = (m_scalar(w + dh) - m_scalar(w - dh)) / (2.0 * dh)
            if abs(slope) < 1e-8 * m_scale:
                inconclusive = (
                    f"sign-changing zero of M near omega={w:.6g} with vanishing "
                    "slope; multiplicity undecidable"
                )
        checked.append((w, mult))

    # dedupe and order decreasing
    checked.sort()
    merged: list[tuple[float, int]] = []
    for w, mult in checked:
        if merged and abs(w - merged[-1][0]) <= 1e-9 * (1.0 + w):
            continue
        merged.append((w, mult))
    out = [
        MZero(omega=w, multiplicity=mult, s_value=float(S_of(f, w)))
        for w, mult in sorted(merged, key=lambda t: -t[0])
    ]
    return MZeroScan(zeros=out, inconclusive_reason=inconclusive, n_grid=int(omegas.size))


def gamma_count(m_zeros: list[MZero], imag_tol: float) -> int:
    """Alternating signed sum over the real-trace zeros, largest first.

    Raises :class:`ImaginaryAxisRootError` when any zero carries an S value
    below ``imag_tol`` (the count is undefined on the spectrum's boundary).
    Multiplicity-2 zeros contribute two consecutive alternating terms.
    """
    expanded: list[float] = []
    for z in m_zeros:
        if abs(z.s_value) < imag_tol:
            raise ImaginaryAxisRootError(
                f"imaginary-axis root at omega={z.omega:.9g} (|S|={abs(z.s_value):.3e})"
            )
        expanded.extend([z.s_value] * z.multiplicity)
    total = 0
    for j, s in enumerate(expanded):
        total += (1 if s > 0 else -1) * (1 if j % 2 == 0 else -1)
    return total


def analyze(
    f: CharFn,
    base_step: Optional[float] = None,
    imag_tol_factor: float = IMAG_ROOT_TOL_FACTOR,
) -> StabilityReport:
    """Run the full decision pipeline and assemble a report.

    Stable if and only if |xi| < 1, the origin value is positive, no
    imaginary-axis root is detected, and the alternating count is zero.
    """
    m_scale = f.scale
    imag_tol = imag_tol_factor * m_scale
    nt = necessary_test(f)
    d0 = nt.delta_at_zero
    principal_ok = abs(f.xi) < 1.0
    integral_ok = d0 > 0.0
    prov = {
        "imag_root_tol": imag_tol,
        "origin_tol": ORIGIN_TOL,
        "m_scale": m_scale,
        "kernel_l1": f.kernel_l1,
        "quadrature": asdict(f.qc),
    }

    def report(**kw) -> StabilityReport:
        base = dict(
            delta_at_zero=d0,
            integral_condition_holds=integral_ok,
            principal_part_ok=principal_ok,
            m_zeros=[],
            gamma=None,
            imaginary_roots=[],
            verdict=Verdict.INCONCLUSIVE,
            reason="",
            provenance=prov,
        )
        base.update(kw)
        return StabilityReport(**base)

    if not principal_ok:
        if abs(f.xi) > 1.0:
            return report(verdict=Verdict.UNSTABLE, reason="principal part unstable (|xi| > 1)")
        return report(
            verdict=Verdict.INCONCLUSIVE,
            reason="principal part marginal (|xi| = 1); spectral count inapplicable",
        )
    if nt.boundary:
        return report(
            verdict=Verdict.MARGINAL_IMAGINARY_ROOT,
            imaginary_roots=[0.0],
            reason="characteristic function vanishes at the origin (within tolerance)",
        )
    if not nt.passed:
        return report(
            verdict=Verdict.UNSTABLE,
            reason="origin test failed: Delta(0) <= 0 forces a positive real root",
        )

    window = frequency_window(f)
    prov["omega_max"] = window.omega_max
    prov["window"] = window.derivation
    scan = find_M_zeros(f, window, base_step=base_step)
    prov["scan_grid_points"] = scan.n_grid
    if scan.inconclusive_reason is not None:
        return report(
            m_zeros=scan.zeros,
            verdict=Verdict.INCONCLUSIVE,
            reason=scan.inconclusive_reason,
        )

    axis = sorted({z.omega for z in scan.zeros if abs(z.s_value) < imag_tol})
    if axis:
        mirrored = sorted({v for w in axis for v in (-w, w)})
        return report(
            m_zeros=scan.zeros,
            imaginary_roots=mirrored,
            verdict=Verdict.MARGINAL_IMAGINARY_ROOT,
            reason="imaginary-axis root(s) detected",
        )

    gamma = gamma_count(scan.zeros, imag_tol)
    if gamma == 0:
        return report(m_zeros=scan.zeros, gamma=0, verdict=Verdict.STABLE)
    if gamma > 0:
        return report(
            m_zeros=scan.zeros,
            gamma=gamma,
            verdict=Verdict.UNSTABLE,
            reason=f"{gamma} root(s) with positive real part",
        )
    return report(
        m_zeros=scan.zeros,
        gamma=gamma,
        verdict=Verdict.INCONCLUSIVE,
        reason="negative alternating count; the zero scan is inconsistent",
    )


def no_root_abscissa(f: CharFn, margin: float = 0.98, n_nodes: int = 256) -> float:
    """Smallest x >= 0 with a proof that no root has real part beyond x.

    Uses |xi| e^(-x tau) + integral |N| e^(-x nu) d nu <= margin < 1, which
    forces |Delta| > 0 on Re s >= x.  Needed to size finite search boxes that
    are guaranteed to contain every right-half-plane root.
    """
    from .kernel import _gl_nodes  # local import to keep the public surface tidy

    x_nodes, w_nodes = _gl_nodes(n_nodes)
    pts = 0.5 * f.tau * (x_nodes + 1.0)
    wabs = 0.5 * f.tau * w_nodes * np.abs(np.asarray(eval_N(f.kernel, pts, f.series_cfg)))

    def bound(x: float) -> float:
        return abs(f.xi) * math.exp(-x * f.tau) + float(wabs @ np.exp(-x * pts))

    if bound(0.0) <= margin:
        return 0.0
    lo, hi = 0.0, 1.0
    while bound(hi) > margin:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ArithmeticError("no-root abscissa search diverged")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if bound(mid) > margin:
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# closed-form imaginary-axis diagnostics for the first two truncations


@dataclass(frozen=True)
class P0AxisCandidates:
    """Candidate imaginary-axis roots of the order-0 truncated function."""

    candidates: tuple[float, ...]
    residuals: tuple[float, ...]
    is_root: tuple[bool, ...]
    b0: float
    discriminant: float
    delta0_at_zero: float


def p0_imaginary_candidates(
    k: Truncated, xi: float, imag_tol_factor: float = IMAG_ROOT_TOL_FACTOR
) -> P0AxisCandidates:
    """Closed-form candidates for imaginary-axis roots at truncation order 0.

    The modulus identity restricts imaginary roots to at most one +/- pair
    with omega^2 = (-B0 + sqrt(D)) / (2 (1 - xi^2)); each candidate is then
    verified against |Delta_0(i omega)| since the identity is only necessary.
    """
    if not isinstance(k, Truncated) or k.p != 0:
        raise KernelError("p0_imaginary_candidates requires a Truncated kernel with p=0")
    if abs(xi) >= 1.0:
        raise HypothesisError("requires |xi| < 1")
    d0 = 1.0 - xi - integral_N(k)
    if d0 <= 0.0:
        raise HypothesisError("integral condition fails for the order-0 truncation")
    a0_, a1_, _, a3_ = k.coeffs
    v0, v1 = derivatives_at_tau(k, 1)
    b0 = a0_**2 + 2.0 * a1_ - v0**2 - 2.0 * xi * v1
    disc = b0**2 + 48.0 * a3_ * (1.0 - xi**2) * d0
    cands: list[float] = []
    if disc >= 0.0:
        x_sq = (-b0 + math.sqrt(disc)) / (2.0 * (1.0 - xi**2))
        if x_sq > 1e-30:
            w = math.sqrt(x_sq)
            cands = [-w, w]
    fp = CharFn(k.consts.tau, xi, k)
    residuals = tuple(abs(delta(fp, 1j * w)) for w in cands)
    tol = imag_tol_factor * fp.scale
    return P0AxisCandidates(
        candidates=tuple(cands),
        residuals=residuals,
        is_root=tuple(r < tol for r in residuals),
        b0=b0,
        discriminant=disc,
        delta0_at_zero=d0,
    )


@dataclass(frozen=True)
class P1AxisTests:
    """Cubic-resolvent tests for imaginary-axis roots at truncation order 1."""

    a_coef: float
    b_coef: float
    c_coef: float
    e_coef: float
    discriminant: float
    q_value: float
    at_most_two: bool
    none_on_axis: bool
    delta1_at_zero: float


def p1_imaginary_tests(k: Truncated, xi: float) -> P1AxisTests:
    """Evaluate the order-1 discriminant tests.

    A negative cubic discriminant bounds the number of imaginary-axis roots by
    two; a nonnegative depressed-cubic constant Q excludes them entirely.
    Both are one-sided sufficient tests on top of the scan-based detection.
    """
    if not isinstance(k, Truncated) or k.p != 1:
        raise KernelError("p1_imaginary_tests requires a Truncated kernel with p=1")
    if abs(xi) >= 1.0:
        raise HypothesisError("requires |xi| < 1")
    d1 = 1.0 - xi - integral_N(k)
    if d1 <= 0.0:
        raise HypothesisError("integral condition fails for the order-1 truncation")
    a0_, a1_, a2_, a3_ = k.coeffs[:4]
    v0, v1, v2, v3 = derivatives_at_tau(k, 3)
    a_c = 1.0 - xi**2
    b_c = a0_**2 + 2.0 * a1_ - v0**2 - 2.0 * xi * v1
    c_c = a1_**2 - 12.0 * a3_ - 4.0 * a0_ * a2_ - v1**2 + 2.0 * xi * v3 + 2.0 * v0 * v2
    e_c = 240.0 * d1
    disc = (
        18.0 * a_c * b_c * c_c * e_c
        - 4.0 * b_c**3 * e_c
        + b_c**2 * c_c**2
        - 4.0 * a_c * c_c**3
        - 27.0 * a_c**2 * e_c**2
    )
    q_val = b_c / (27.0 * a_c) * (2.0 * b_c**2 / a_c**2 - 9.0 * c_c / a_c) + e_c / a_c
    return P1AxisTests(
        a_coef=a_c,
        b_coef=b_c,
        c_coef=c_c,
        e_coef=e_c,
        discriminant=disc,
        q_value=q_val,
        at_most_two=disc < 0.0,
        none_on_axis=q_val >= 0.0,
        delta1_at_zero=d1,
    )


# ---------------------------------------------------------------------------
# truncation certificate


@dataclass
class TruncationCertificate:
    certified: bool
    p0: int
    epsilon0: float
    l1_gap: float
    axis_min: float
    axis_slack: float
    tail_floor: float
    report: Optional[StabilityReport]
    reason: str = ""
    heuristic_note: str = (
        "zero-freeness of the truncated function relies on the M-zero scan "
        "being exhaustive; the half-plane infimum is bounded through the "
        "boundary minimum plus the large-|s| tail"
    )

    def to_dict(self) -> dict:
        d = {
            "certified": self.certified,
            "p0": self.p0,
            "epsilon0": self.epsilon0,
            "l1_gap": self.l1_gap,
            "axis_min": self.axis_min,
            "axis_slack": self.axis_slack,
            "tail_floor": self.tail_floor,
            "reason": self.reason,
            "heuristic_note": self.heuristic_note,
            "report": self.report.to_dict() if self.report is not None else None,
        }
        return d


def truncation_certificate(
    f: CharFn, p0: int, axis_step: Optional[float] = None
) -> TruncationCertificate:
    """Certify the exact kernel through a stable truncation and an L1 gap.

    If the truncated characteristic function is verified stable and its
    modulus on the closed right half-plane exceeds the L1 distance between
    the kernels, the exact function cannot vanish there either.
    """
    if not isinstance(f.kernel, ClosedForm):
        raise KernelError("truncation_certificate requires a ClosedForm kernel")
    tr = truncate(f.kernel.consts, p0)
    fp = CharFn(f.tau, f.xi, tr, f.qc, f.series_cfg)
    rep = analyze(fp)

    def fail(reason: str, **kw) -> TruncationCertificate:
        base = dict(
            certified=False,
            p0=p0,
            epsilon0=float("nan"),
            l1_gap=float("nan"),
            axis_min=float("nan"),
            axis_slack=float("nan"),
            tail_floor=float("nan"),
            report=rep,
            reason=reason,
        )
        base.update(kw)
        return TruncationCertificate(**base)

    if rep.verdict != Verdict.STABLE:
        return fail(f"order-{p0} truncation is not certified stable ({rep.verdict.value})")

    window = frequency_window(fp)
    h = axis_step if axis_step is not None else min(f.tau, 1.0) / 256.0
    om = np.arange(0.0, window.omega_max + h, h)
    axis_vals = np.abs(np.asarray(delta(fp, 1j * om)))
    axis_min = float(np.min(axis_vals))
    lip = f.tau * abs(f.xi) + abs_integral(tr, f.qc, weight_power=1)
    slack = 0.5 * lip * h
    tail_floor = 1.0 - abs(f.xi) - window.derivation["tail_constant"] / window.omega_max
    eps0 = min(axis_min - slack, tail_floor)
    gap = l1_distance(f.kernel, tr, f.qc, f.series_cfg)
    if eps0 <= 0.0:
        return fail(
            "axis margin nonpositive after interpolation slack",
            epsilon0=eps0,
            l1_gap=gap,
            axis_min=axis_min,
            axis_slack=slack,
            tail_floor=tail_floor,
        )
    return TruncationCertificate(
        certified=gap < eps0,
        p0=p0,
        epsilon0=eps0,
        l1_gap=gap,
        axis_min=axis_min,
        axis_slack=slack,
        tail_floor=tail_floor,
        report=rep,
        reason="" if gap < eps0 else "L1 gap exceeds the certified margin",
    )
