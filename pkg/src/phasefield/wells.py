"""Double-well potentials, the surface tension sigma_W and optimal profiles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._bvp import DiscreteEnergy, newton_minimize
from .profile import Profile

Array = np.ndarray


@dataclass(frozen=True)
class DoubleWell:
    """A double-well potential W with wells at -1 and +1.

    Parameters
    ----------
    name : str
        Registry name, used for serialization.
    evaluate, d1, d2 : callable
        W, W' and W'' as vectorized functions.
    kappa : int
        Nondegeneracy order at the wells.
    growth_p : float
        Declared growth exponent: W(u) >= |u|^p - growth_c for |u| >= 2.
    growth_c : float
        Constant in the growth bound.
    symmetric : bool
        Whether W(-u) = W(u).
    """

    name: str
    evaluate: Callable[[Array], Array] = field(repr=False)
    d1: Callable[[Array], Array] = field(repr=False)
    d2: Callable[[Array], Array] = field(repr=False)
    kappa: int = 1
    growth_p: float = 4.0
    growth_c: float = 0.0
    symmetric: bool = True

    def __call__(self, u):
        return self.evaluate(u)

    def reflected(self) -> "DoubleWell":
        """The well u -> W(-u)."""
        f, g, h = self.evaluate, self.d1, self.d2
        return DoubleWell(
            name=self.name + "-reflected",
            evaluate=lambda u: f(-np.asarray(u)),
            d1=lambda u: -g(-np.asarray(u)),
            d2=lambda u: h(-np.asarray(u)),
            kappa=self.kappa,
            growth_p=self.growth_p,
            growth_c=self.growth_c,
            symmetric=self.symmetric,
        )

    def max_abs_d1(self, n: int = 2001) -> float:
        """sup |W'| on [-1, 1], sampled."""
        u = np.linspace(-1.0, 1.0, n)
        return float(np.max(np.abs(self.d1(u))))


def _quartic(u):
    u = np.asarray(u, dtype=float)
    return (1.0 - u * u) ** 2


def _quartic_d1(u):
    u = np.asarray(u, dtype=float)
    return -4.0 * u * (1.0 - u * u)


def _quartic_d2(u):
    u = np.asarray(u, dtype=float)
    return 12.0 * u * u - 4.0


def quartic_well() -> DoubleWell:
    """W(u) = (1 - u^2)^2 with kappa = 1 and p = 4."""
    return DoubleWell("quartic", _quartic, _quartic_d1, _quartic_d2, kappa=1, growth_p=4.0)


# g(u) = 1 + b u + c u^2 has no real roots, so W = (1-u^2)^2 g stays positive off +-1
_PB, _PC = 0.3, 0.2


def _pert(u):
    u = np.asarray(u, dtype=float)
    return (1.0 - u * u) ** 2 * (1.0 + _PB * u + _PC * u * u)


def _pert_d1(u):
    u = np.asarray(u, dtype=float)
    s = 1.0 - u * u
    g = 1.0 + _PB * u + _PC * u * u
    return -4.0 * u * s * g + s * s * (_PB + 2.0 * _PC * u)


def _pert_d2(u):
    u = np.asarray(u, dtype=float)
    s = 1.0 - u * u
    g = 1.0 + _PB * u + _PC * u * u
    dg = _PB + 2.0 * _PC * u
    return (12.0 * u * u - 4.0) * g - 8.0 * u * s * dg + 2.0 * _PC * s * s


def perturbed_well() -> DoubleWell:
    """An asymmetric smooth perturbation of the quartic with the same zeros.

    W(u) = (1 - u^2)^2 (1 + 0.3 u + 0.2 u^2). The minima stay nondegenerate
    (kappa = 1) and W grows like 0.2 u^6, which dominates u^4 - 4 for |u| >= 2.
    """
    return DoubleWell(
        "perturbed", _pert, _pert_d1, _pert_d2, kappa=1, growth_p=4.0, growth_c=4.0, symmetric=False
    )


_REGISTRY = {"quartic": quartic_well, "perturbed": perturbed_well}


def well_from_name(name: str) -> DoubleWell:
    """Look up a built-in well; a ``-reflected`` suffix reflects it."""
    base, reflected = name, False
    if name.endswith("-reflected"):
        base, reflected = name[: -len("-reflected")], True
    try:
        w = _REGISTRY[base]()
    except KeyError:
        raise ValueError(f"unknown well {name!r}; choose from {sorted(_REGISTRY)}") from None
    return w.reflected() if reflected else w


def _gauss_legendre(f, lo: float, hi: float, panels: int, order: int = 8) -> float:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    pts = mid[:, None] + half[:, None] * x[None, :]
    return float(np.sum(half[:, None] * w[None, :] * f(pts)))


def adaptive_quad(f, lo: float, hi: float, rtol: float = 1e-10, max_panels: int = 1 << 16) -> float:
    """Composite Gauss-Legendre, doubling panels until the estimate settles."""
    panels = 4
    prev = _gauss_legendre(f, lo, hi, panels)
    while panels < max_panels:
        panels *= 2
        cur = _gauss_legendre(f, lo, hi, panels)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise RuntimeError("quadrature did not converge")


def sigma_w(
    well: DoubleWell,
    method: str = "equipartition",
    grad_coeff: float = 1.0,
    well_coeff: float = 1.0,
    half_length: float = 20.0,
    n: int = 40000,
) -> float:
    """Surface tension of the transition problem.

    Computes min of the integral of (grad_coeff/2 u'^2 + well_coeff W(u)) over
    profiles joining -1 to +1. With unit coefficients this is sigma_W.

    Parameters
    ----------
    well : DoubleWell
    method : {"equipartition", "variational"}
        ``equipartition`` integrates sqrt(2 W) over [-1, 1]; ``variational``
        minimizes the discretized energy on [-half_length, half_length].
    grad_coeff, well_coeff : float
        Positive coefficients; the result scales like their geometric mean.
    half_length : float
        Truncation of the line for the variational method.
    n : int
        Number of grid intervals for the variational method.

    Returns
    -------
    float
    """
    if grad_coeff <= 0 or well_coeff <= 0:
        raise ValueError("coefficients must be positive")
    if method == "equipartition":
        base = adaptive_quad(lambda u: np.sqrt(2.0 * np.maximum(well(u), 0.0)), -1.0, 1.0)
        return float(np.sqrt(grad_coeff * well_coeff) * base)
    if method == "variational":
        prof = optimal_profile(well, grad_coeff, well_coeff, half_length=half_length, n=n)
        return float(prof.energy)
    raise ValueError(f"unknown method {method!r}")


def optimal_profile(
    well: DoubleWell,
    grad_coeff: float = 1.0,
    well_coeff: float = 1.0,
    half_length: float = 20.0,
    n: int = 40000,
) -> Profile:
    """Minimizer q* of the transition energy, normalized so that q*(0) = 0.

    Solves the discrete Euler-Lagrange system by damped Newton on
    [-half_length, half_length] with boundary values -1 and +1, then
    translates so the zero crossing sits at the origin. For asymmetric wells
    the result is resampled onto a symmetric grid.

    Returns
    -------
    Profile
        Nodal values with ``energy`` set to the discrete minimum.
    """
    if grad_coeff <= 0 or well_coeff <= 0:
        raise ValueError("coefficients must be positive")
    L = float(half_length)
    x = np.linspace(-L, L, n + 1)
    ne = n
    de = DiscreteEnergy(
        x=x,
        a=np.full(ne, float(grad_coeff)),
        theta=np.full(ne, float(well_coeff)),
        eps=1.0,
        well=well,
    )
    k = np.sqrt(max(well.d2(np.array(1.0)), 1e-12) * well_coeff / grad_coeff) / 2.0
    u0 = np.tanh(k * x)
    u0[0], u0[-1] = -1.0, 1.0
    res = newton_minimize(de, u0)
    if not res.converged:
        raise RuntimeError(f"profile solve did not converge (residual {res.residual:.2e})")
    u = res.u
    shift = float(np.interp(0.0, u, x))
    if abs(shift) > 0.5 * (x[1] - x[0]) * 1e-6:
        Ls = L - abs(shift)
        xs = np.linspace(-Ls, Ls, n + 1)
        u = np.interp(xs + shift, x, u)
        x = xs
    return Profile(grid=x, values=u, energy=float(res.energy), residual_sup=float(res.residual))
