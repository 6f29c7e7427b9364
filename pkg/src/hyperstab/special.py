"""Entire power series behind the delay-kernel closed form.

The kernel is assembled from two series in the variable h:

    a0(h) = sum_{p>=0} (-1)^p h^p / (p!)^2
    a2(h) = sum_{p>=0} (-1)^p h^(p+1) / (p! (p+2)!)

Both are entire functions of h.  For h >= 0 they coincide with the classical
Bessel values J0(2*sqrt(h)) and J2(2*sqrt(h)); for h < 0 they turn into the
modified values I0(2*sqrt(-h)) and -I2(2*sqrt(-h)).  Working directly in h
keeps every evaluation real for either sign, which is exactly what the
kernel needs when the coupling product changes sign.

All sums use Kahan-compensated accumulation: the series alternate and the
partial terms can exceed the final value by orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Largest |h| for which terms h^p/(p!)^2 stay inside double range before the
# factorials win (max term ~ exp(2*sqrt|h|), overflow near 2*sqrt|h| ~ 709).
_H_OVERFLOW = 1.25e5


class SeriesError(ArithmeticError):
    """Raised when a series cannot be summed within the configured budget."""


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation policy for the entire series."""

    rel_term_tol: float = 1e-12
    max_terms: int = 400

    def __post_init__(self) -> None:
        if not 0 < self.rel_term_tol <= 1e-12:
            raise ValueError("rel_term_tol must lie in (0, 1e-12]")
        if self.max_terms < 50:
            raise ValueError("max_terms must be at least 50")


DEFAULT_SERIES_CONFIG = SeriesConfig()


def _check_argument(h: float) -> None:
    if h != h:
        raise ValueError("series argument must be finite")
    if abs(h) > _H_OVERFLOW:
        raise SeriesError(
            f"series terms overflow for |h| > {_H_OVERFLOW:.3g} (got h={h:.6g})"
        )


def _sum_alternating(h: float, first: float, ratio, cfg: SeriesConfig) -> float:
    """Kahan-sum sum_p t_p with t_0 = first and t_{p+1} = t_p * (-h) * ratio(p).

    Termination requires the index to be past the term-magnitude hump
    (roughly sqrt(|h|)) so a still-growing alternating series is never cut.
    """
    _check_argument(h)
    hump = math.sqrt(abs(h))
    total = 0.0
    comp = 0.0
    term = first
    for p in range(cfg.max_terms):
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        term = term * (-h) * ratio(p)
        if p >= hump and abs(term) <= cfg.rel_term_tol * (1.0 + abs(total)):
            return total
    raise SeriesError(f"series did not settle within {cfg.max_terms} terms (h={h:.6g})")


def a0(h: float, cfg: SeriesConfig = DEFAULT_SERIES_CONFIG) -> float:
    """sum (-1)^p h^p/(p!)^2; equals J0(2*sqrt(h)) for h>=0, I0(2*sqrt(-h)) for h<0."""
    return _sum_alternating(h, 1.0, lambda p: 1.0 / ((p + 1.0) * (p + 1.0)), cfg)


def a2(h: float, cfg: SeriesConfig = DEFAULT_SERIES_CONFIG) -> float:
    """sum (-1)^p h^(p+1)/(p!(p+2)!); the J2 companion of :func:`a0`."""
    return _sum_alternating(h, h / 2.0, lambda p: 1.0 / ((p + 1.0) * (p + 3.0)), cfg)


def a0_prime(h: float, cfg: SeriesConfig = DEFAULT_SERIES_CONFIG) -> float:
    """d a0/dh = sum (-1)^(p+1) h^p/(p!(p+1)!)."""
    return _sum_alternating(h, -1.0, lambda p: 1.0 / ((p + 1.0) * (p + 2.0)), cfg)


def a2_prime(h: float, cfg: SeriesConfig = DEFAULT_SERIES_CONFIG) -> float:
    """d a2/dh = sum (-1)^p (p+1) h^p/(p!(p+2)!)."""
    return _sum_alternating(
        h,
        0.5,
        lambda p: (p + 2.0) / ((p + 1.0) * (p + 1.0) * (p + 3.0)),
        cfg,
    )


def i_modified(order: int, x: float, cfg: SeriesConfig = DEFAULT_SERIES_CONFIG) -> float:
    """Modified Bessel I0 or I2 by its own ascending series (x >= 0).

    Kept independent of :func:`a0`/:func:`a2` so the identity
    a0(-x^2/4) == i_modified(0, x) can serve as a cross-check between two
    separately coded series.
    """
    if order not in (0, 2):
        raise ValueError("order must be 0 or 2")
    if x < 0:
        raise ValueError("x must be nonnegative")
    _check_argument(-(x * x) / 4.0)
    w = (x / 2.0) ** 2
    if order == 0:
        term = 1.0
        ratio = lambda k: 1.0 / ((k + 1.0) * (k + 1.0))  # noqa: E731
    else:
        term = w / 2.0
        ratio = lambda k: 1.0 / ((k + 1.0) * (k + 3.0))  # noqa: E731
    total = 0.0
    comp = 0.0
    for k in range(cfg.max_terms):
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        term = term * w * ratio(k)
        if k >= math.sqrt(w) and term <= cfg.rel_term_tol * (1.0 + total):
            return total
    raise SeriesError(f"modified-Bessel series did not settle (x={x:.6g})")
