"""Physical description of the coupled transport system and its derived constants."""

from __future__ import annotations

from dataclasses import dataclass


class ParameterError(ValueError):
    """Raised when a system description violates a structural assumption."""


@dataclass(frozen=True)
class HyperbolicSystem:
    """Constant-coefficient data of the two counter-propagating transport equations.

    ``lam`` and ``mu`` are the transport speeds (both positive), ``sigma_plus``
    and ``sigma_minus`` the in-domain couplings, ``rho`` and ``q`` the boundary
    reflection coefficients.  ``q`` must be nonzero.
    """

    sigma_plus: float
    sigma_minus: float
    lam: float
    mu: float
    rho: float
    q: float

    @classmethod
    def from_inverse_speeds(
        cls,
        sigma_plus: float,
        sigma_minus: float,
        inv_lambda: float,
        inv_mu: float,
        rho: float,
        q: float,
    ) -> "HyperbolicSystem":
        """Build a system from reciprocal speeds (the usual tabulated form)."""
        if inv_lambda <= 0:
            raise ParameterError("inv_lambda must be positive")
        if inv_mu <= 0:
            raise ParameterError("inv_mu must be positive")
        return cls(sigma_plus, sigma_minus, 1.0 / inv_lambda, 1.0 / inv_mu, rho, q)


@dataclass(frozen=True)
class DerivedConstants:
    """Scalar constants derived from a :class:`HyperbolicSystem`.

    ``tau`` is the total transit time ``1/lam + 1/mu``, ``xi = q*rho`` the
    principal reflection product, ``a`` and ``R`` the coupling aggregates
    ``q*sigma_minus/mu + rho*sigma_plus/lam`` and ``sigma_plus*sigma_minus/(lam*mu)``,
    and ``b = 1 + q*rho``.
    """

    tau: float
    xi: float
    a: float
    R: float
    b: float


def validate(sys: HyperbolicSystem) -> list[str]:
    """Return every violated invariant of ``sys`` (empty list means valid)."""
    problems = []
    for name in ("sigma_plus", "sigma_minus", "lam", "mu", "rho", "q"):
        value = getattr(sys, name)
        if not _finite(value):
            problems.append(f"{name} must be finite")
    if _finite(sys.lam) and sys.lam <= 0:
        problems.append("lambda must be positive")
    if _finite(sys.mu) and sys.mu <= 0:
        problems.append("mu must be positive")
    if _finite(sys.q) and sys.q == 0:
        problems.append("q must be nonzero")
    return problems


def derive_constants(sys: HyperbolicSystem) -> DerivedConstants:
    """Compute the five derived constants; rejects invalid systems."""
    problems = validate(sys)
    if problems:
        raise ParameterError("; ".join(problems))
    tau = 1.0 / sys.lam + 1.0 / sys.mu
    xi = sys.q * sys.rho
    a = sys.q * sys.sigma_minus / sys.mu + sys.rho * sys.sigma_plus / sys.lam
    big_r = sys.sigma_plus * sys.sigma_minus / (sys.lam * sys.mu)
    return DerivedConstants(tau=tau, xi=xi, a=a, R=big_r, b=1.0 + xi)


def _finite(x: float) -> bool:
    return x == x and abs(x) != float("inf")
