"""Discrete Allen-Cahn energy on a 1D grid and its damped Newton minimizer.

The energy of a piecewise-linear u with elementwise-constant coefficients is

    E(u) = sum_e [ eps/2 a_e (du_e)^2 / h_e + eps^{-1} theta_e h_e avg_e W(u) ],

where avg_e is three-point Gauss-Legendre on the element. The gradient term is
exact; the potential term is exact for quartic W since W(u) is then a degree-4
polynomial along each element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded, solveh_banded

_XI = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_WG = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass
class DiscreteEnergy:
    """Energy functional on nodes ``x`` with element coefficients ``a``, ``theta``."""

    x: np.ndarray
    a: np.ndarray
    theta: np.ndarray
    eps: float
    well: object

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.h = np.diff(self.x)
        if np.any(self.h <= 0):
            raise ValueError("grid must be strictly increasing")
        self.a = np.asarray(self.a, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.a.shape != self.h.shape or self.theta.shape != self.h.shape:
            raise ValueError("one coefficient per element required")
        self.mass = np.zeros_like(self.x)
        self.mass[:-1] += 0.5 * self.h
        self.mass[1:] += 0.5 * self.h
        self._k = self.eps * self.a / self.h
        self._c = self.theta * self.h / self.eps

    def _gauss_values(self, u):
        return u[:-1, None] * (1.0 - _XI) + u[1:, None] * _XI

    def value(self, u) -> float:
        du = np.diff(u)
        grad = 0.5 * np.sum(self._k * du * du)
        pot = np.sum(self._c * (self.well.evaluate(self._gauss_values(u)) @ _WG))
        return float(grad + pot)

    def parts(self, u):
        """Gradient-term and potential-term energies separately."""
        du = np.diff(u)
        grad = 0.5 * np.sum(self._k * du * du)
        pot = np.sum(self._c * (self.well.evaluate(self._gauss_values(u)) @ _WG))
        return float(grad), float(pot)

    def potential_gradient(self, u):
        wp = self.well.d1(self._gauss_values(u))
        g = np.zeros_like(u)
        g[:-1] += self._c * (wp @ (_WG * (1.0 - _XI)))
        g[1:] += self._c * (wp @ (_WG * _XI))
        return g

    def gradient(self, u):
        flux = self._k * np.diff(u)
        g = self.potential_gradient(u)
        g[:-1] -= flux
        g[1:] += flux
        return g

    def hessian_bands(self, u):
        """Return (diag, off) of the tridiagonal Hessian."""
        wpp = self.well.d2(self._gauss_values(u))
        k = self._k
        diag = np.zeros_like(u)
        diag[:-1] += k + self._c * (wpp @ (_WG * (1.0 - _XI) ** 2))
        diag[1:] += k + self._c * (wpp @ (_WG * _XI**2))
        off = -k + self._c * (wpp @ (_WG * _XI * (1.0 - _XI)))
        return diag, off

    def roundoff_floor(self) -> float:
        """Smallest residual resolvable in double precision.

        Nodal values carry an absolute rounding error of one ulp, which the
        strong-form residual amplifies by eps * (k_left + k_right) / mass.
        """
        k = self._k
        amp = (k[:-1] + k[1:]) / self.mass[1:-1]
        return 2.0 * float(np.finfo(float).eps) * self.eps * float(np.max(amp))

    def residual(self, g) -> np.ndarray:
        """Pointwise Euler-Lagrange residual in mesoscopic units at interior nodes."""
        return self.eps * g[1:-1] / self.mass[1:-1]


@dataclass
class NewtonResult:
    u: np.ndarray
    energy: float
    residual: float
    iterations: int
    converged: bool
    fallbacks: int
    tol: float


def _solve_spd_shifted(diag, off, rhs):
    scale = max(float(np.max(np.abs(diag))), 1e-300)
    mu = 0.0
    ab = np.empty((2, diag.size))
    # the stiffness dominates the diagonal, so the shift starts far below it
    # and grows slowly; a coarse shift would damp the soft interface modes
    for _ in range(64):
        ab[0] = diag + mu
        ab[1, :-1] = off
        ab[1, -1] = 0.0
        try:
            return solveh_banded(ab, rhs, lower=True, check_finite=False)
        except LinAlgError:
            mu = scale * 1e-14 if mu == 0.0 else mu * 4.0
    raise LinAlgError("could not regularize Hessian")


def _gradient_flow(de: DiscreteEnergy, u, steps: int, clamp: float):
    # implicit stiffness, explicit W'
    wpp = np.abs(de.well.d2(np.linspace(-clamp, clamp, 401))).max()
    tau = de.eps / (float(np.max(de.theta)) * wpp + 1e-300)
    m = de.mass[1:-1] / tau
    k = de._k
    diag = m + k[:-1] + k[1:]
    off = -k[1:-1]
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    u = u.copy()
    for _ in range(steps):
        gw = de.potential_gradient(u)[1:-1]
        rhs = m * u[1:-1] - gw
        rhs[0] += k[0] * u[0]
        rhs[-1] += k[-1] * u[-1]
        u[1:-1] = np.clip(solve_banded((1, 1), ab, rhs, check_finite=False), -clamp, clamp)
    return u


def newton_minimize(
    de: DiscreteEnergy,
    u0,
    tol: float | None = None,
    max_iter: int = 200,
    clamp: float = 2.0,
    fallback_steps: int = 200,
    max_fallbacks: int = 3,
    callback=None,
) -> NewtonResult:
    """Damped Newton with Armijo backtracking; end values of ``u0`` are held fixed.

    Parameters
    ----------
    de : DiscreteEnergy
    u0 : array_like
        Initial iterate including the Dirichlet end values.
    tol : float, optional
        Sup-norm tolerance on the mesoscopic residual. Defaults to
        1e-8 * max(theta) * sup |W'| on [-1, 1]. The tolerance applied is
        the larger of this and ``de.roundoff_floor()``.
    clamp : float
        Interior values are projected onto [-clamp, clamp].
    callback : callable, optional
        Called as callback(iteration, residual, energy) before each step.
    """
    u = np.array(u0, dtype=float)
    if u.size < 3:
        raise ValueError("need at least one interior node")
    if tol is None:
        tol = 1e-8 * float(np.max(de.theta)) * de.well.max_abs_d1()
    tol = max(tol, de.roundoff_floor())
    u[1:-1] = np.clip(u[1:-1], -clamp, clamp)
    E = de.value(u)
    fallbacks = 0
    it = 0
    r = np.inf
    while it < max_iter:
        g = de.gradient(u)
        r = float(np.max(np.abs(de.residual(g))))
        if callback is not None:
            callback(it, r, E)
        if r < tol:
            return NewtonResult(u, E, r, it, True, fallbacks, tol)
        it += 1
        diag, off = de.hessian_bands(u)
        gi = g[1:-1]
        d = -_solve_spd_shifted(diag[1:-1], off[1:-1], gi)
        slope = float(gi @ d)
        if slope >= 0:
            d = -gi
            slope = float(gi @ d)
        t = 1.0
        accepted = False
        while t > 1e-10:
            un = u.copy()
            un[1:-1] = np.clip(u[1:-1] + t * d, -clamp, clamp)
            En = de.value(un)
            if En <= E + 1e-4 * t * slope:
                accepted = True
            elif abs(t * slope) < 1e-12 * (1.0 + abs(E)):
                # energy differences are at roundoff; judge by residual instead
                rn = float(np.max(np.abs(de.residual(de.gradient(un)))))
                accepted = rn < r
            if accepted:
                break
            t *= 0.5
        if accepted and t == 1.0 and En - E < 0.75 * slope:
            # decrease beats the quadratic model: the iterate is drifting along
            # a soft mode (interface translation), so try longer steps
            while t < 1024.0:
                ue = u.copy()
                ue[1:-1] = np.clip(u[1:-1] + 2.0 * t * d, -clamp, clamp)
                Ee = de.value(ue)
                if Ee >= En:
                    break
                un, En, t = ue, Ee, 2.0 * t
        if accepted:
            u, E = un, En
            continue
        if fallbacks >= max_fallbacks:
            break
        fallbacks += 1
        u = _gradient_flow(de, u, fallback_steps, clamp)
        E = de.value(u)
    g = de.gradient(u)
    r = float(np.max(np.abs(de.residual(g))))
    return NewtonResult(u, E, r, it, r < tol, fallbacks, tol)
