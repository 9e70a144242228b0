"""Planar cell problems: discretization, minimization and competitor energies.

The cell problem on (x0 - rho, x0 + rho) is

    min  int eps/2 a(x/delta) u'^2 + eps^-1 theta(x/delta) W(u) dx,
    u(x0 +- rho) = q(+-rho/eps),

with q = tanh(sqrt(2) .) and a, theta read from a cell medium in micro units.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from ._bvp import DiscreteEnergy, newton_minimize
from .homog import HomogenizedConstants
from .media import Medium1D, ProductMediumD
from .profile import Profile
from .wells import DoubleWell, adaptive_quad, optimal_profile, quartic_well, sigma_w

SQRT2 = math.sqrt(2.0)


class SolverError(RuntimeError):
    """Raised when no start converges or the grid exceeds its budget."""


def boundary_profile(epsilon: float, center: float = 0.0) -> Callable:
    """x -> q((x - center) / epsilon) with q = tanh(sqrt(2) .)."""
    return lambda x: np.tanh(SQRT2 * (np.asarray(x, dtype=float) - center) / epsilon)


@dataclass
class CellProblem1D:
    """Data of a planar cell problem in one dimension.

    Attributes
    ----------
    epsilon, delta : float
        Interface width and microscopic length.
    rho : float
        Half-width of the interval.
    medium : Medium1D
        Coefficients in micro units; a(x/delta), theta(x/delta).
    well : DoubleWell
    center : float
        x0.
    q : callable
        Boundary profile in mesoscopic units, default tanh(sqrt(2) s).
    """

    epsilon: float
    delta: float
    rho: float
    medium: Medium1D
    well: DoubleWell = field(default_factory=quartic_well)
    center: float = 0.0
    q: Callable = field(default=lambda s: np.tanh(SQRT2 * np.asarray(s, dtype=float)))

    def __post_init__(self):
        if self.epsilon <= 0 or self.delta <= 0 or self.rho <= 0:
            raise ValueError("epsilon, delta and rho must be positive")
        if self.delta >= self.epsilon:
            warnings.warn("delta >= epsilon lies outside the asymptotic regime", stacklevel=2)

    @property
    def lo(self) -> float:
        return self.center - self.rho

    @property
    def hi(self) -> float:
        return self.center + self.rho

    def boundary_values(self) -> tuple[float, float]:
        return float(self.q(-self.rho / self.epsilon)), float(self.q(self.rho / self.epsilon))

    def grid_spacing(self) -> float:
        return min(self.delta / 8.0, self.epsilon / 64.0)


@dataclass
class Grid1D:
    x: np.ndarray
    a: np.ndarray
    theta: np.ndarray
    h: float


def build_grid(problem: CellProblem1D, h: float | None = None, max_nodes: int = 8_000_000) -> Grid1D:
    """Nodes aligned with the delta-cell edges, spacing at most ``h``.

    Every cell is split into the same integer number of equal elements, so
    each element sees constant coefficients.
    """
    h = problem.grid_spacing() if h is None else float(h)
    d = problem.delta
    med = problem.medium
    mlo, mhi = problem.lo / d, problem.hi / d
    if not med.covers(mlo, mhi):
        raise IndexError("grid/medium window mismatch: medium does not cover the domain")
    breaks, a, th = med.pieces(mlo, mhi)
    breaks = breaks * d
    per_cell = math.ceil(med.cell_width * d / h - 1e-9)
    lens = np.diff(breaks)
    counts = np.maximum(np.ceil(lens / (med.cell_width * d) * per_cell - 1e-6).astype(np.int64), 1)
    total = int(counts.sum()) + 1
    if total > max_nodes:
        raise SolverError(f"grid budget exceeded: {total} nodes")
    starts = np.repeat(breaks[:-1], counts)
    steps = np.repeat(lens / counts, counts)
    local = np.arange(total - 1) - np.repeat(np.cumsum(counts) - counts, counts)
    x = np.empty(total)
    x[:-1] = starts + local * steps
    x[-1] = breaks[-1]
    return Grid1D(x, np.repeat(a, counts), np.repeat(th, counts), h)


def discrete_energy(problem: CellProblem1D, grid: Grid1D | None = None) -> tuple[DiscreteEnergy, Grid1D]:
    grid = build_grid(problem) if grid is None else grid
    return DiscreteEnergy(grid.x, grid.a, grid.theta, problem.epsilon, problem.well), grid


def energy(problem: CellProblem1D, u: Profile, grid: Grid1D | None = None) -> float:
    """Energy of a nodal profile on the problem grid.

    The gradient term is exact for piecewise-linear u; the potential term uses
    three Gauss points per element, exact for the quartic well.
    """
    de, grid = discrete_energy(problem, grid)
    if u.grid.shape != grid.x.shape or not np.allclose(u.grid, grid.x, rtol=0, atol=1e-12 * max(1.0, problem.rho)):
        raise ValueError("grid/medium window mismatch: profile is not on the problem grid")
    return de.value(u.values)


def _star_profile(well: DoubleWell, lam: float, theta: float):
    if well.name == "quartic":
        k = SQRT2 * math.sqrt(theta / lam)
        return lambda s: np.tanh(k * np.asarray(s, dtype=float))
    return _cached_profile(well.name, lam, theta)


@lru_cache(maxsize=32)
def _cached_profile(name: str, lam: float, theta: float):
    from .wells import well_from_name

    return optimal_profile(well_from_name(name), lam, theta)


def glue_competitor(problem: CellProblem1D, center_s: float, stretch_M: float, grid: Grid1D | None = None,
                    target: tuple | None = None) -> Profile:
    """Optimal (lambda, theta_*) profile recentred at ``center_s``.

    Interior nodes carry q_*((x - center_s) / eps) for the coefficients
    ``target`` (default: the medium's lower bounds); the end nodes carry the
    boundary datum, which gives linear ramps over one grid band.
    """
    eps = problem.epsilon
    if center_s - stretch_M * eps < problem.lo or center_s + stretch_M * eps > problem.hi:
        raise ValueError("stretch exits the domain")
    grid = build_grid(problem) if grid is None else grid
    b = problem.medium.bounds
    lam, th = target if target is not None else (b.lam, b.th_lo)
    qs = _star_profile(problem.well, lam, th)
    u = np.asarray(qs((grid.x - center_s) / eps), dtype=float)
    u[0], u[-1] = problem.boundary_values()
    return Profile(grid.x.copy(), u)


def boundary_competitor(problem: CellProblem1D, grid: Grid1D | None = None) -> Profile:
    """The boundary datum itself, q((x - x0) / eps), as a profile."""
    grid = build_grid(problem) if grid is None else grid
    u = np.asarray(problem.q((grid.x - problem.center) / problem.epsilon), dtype=float)
    return Profile(grid.x.copy(), u)


def favorable_runs(problem: CellProblem1D, min_length: float) -> list[tuple[float, float]]:
    """Maximal runs of (lambda, theta_*) cells inside the domain, macro units."""
    med = problem.medium
    b = med.bounds
    d = problem.delta
    breaks, a, th = med.pieces(problem.lo / d, problem.hi / d)
    good = (a == b.lam) & (th == b.th_lo)
    g = np.concatenate([[0], good.astype(np.int8), [0]])
    dg = np.diff(g)
    s = np.flatnonzero(dg == 1)
    e = np.flatnonzero(dg == -1)
    runs = [(breaks[i] * d, breaks[j] * d) for i, j in zip(s, e)]
    return [r for r in runs if r[1] - r[0] >= min_length - 1e-12]


@dataclass
class MinimizeOptions:
    M_min: float = 2.0
    tol: float | None = None
    max_iter: int = 200
    max_nodes: int = 8_000_000
    max_run_starts: int = 16
    h: float | None = None


@dataclass
class MinimizeReport:
    """Result of a cell-problem minimization."""

    energy: float
    profile: Profile
    residual_sup: float
    iterations: int
    starts_used: list
    start_energies: dict
    competitor_energy: float
    h: float
    n_nodes: int
    tol: float
    converged_starts: list
    tol_requested: float = 0.0

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "residual": self.residual_sup,
            "iterations": self.iterations,
            "start": self.starts_used[0] if self.starts_used else None,
            "starts_used": self.starts_used,
            "start_energies": self.start_energies,
            "competitor_energy": self.competitor_energy,
            "grid": {"h": self.h, "n_nodes": self.n_nodes, "lo": float(self.profile.grid[0]),
                     "hi": float(self.profile.grid[-1])},
            "tol": self.tol,
            "tol_requested": self.tol_requested,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


def minimize_cell_problem(problem: CellProblem1D, options: MinimizeOptions | None = None) -> MinimizeReport:
    """Minimize the discretized cell problem from several starts.

    Starts are the centered boundary datum and one glued (lambda, theta_*)
    profile per maximal favorable run of length at least M_min eps. The
    lowest-energy converged start wins; ties go to the earlier start.

    Raises
    ------
    SolverError
        If every start fails to converge, a minimizer leaves [-1, 1], or the
        grid is over budget.
    """
    opt = options or MinimizeOptions()
    grid = build_grid(problem, opt.h, opt.max_nodes)
    de = DiscreteEnergy(grid.x, grid.a, grid.theta, problem.epsilon, problem.well)
    tol_req = opt.tol if opt.tol is not None else 1e-8 * problem.medium.bounds.th_hi * problem.well.max_abs_d1()
    tol = max(tol_req, de.roundoff_floor())
    comp = boundary_competitor(problem, grid)
    comp_energy = de.value(comp.values)
    starts = [("centered", comp.values)]
    runs = favorable_runs(problem, opt.M_min * problem.epsilon)
    runs.sort(key=lambda r: -(r[1] - r[0]))
    for lo, hi in runs[: opt.max_run_starts]:
        mid = 0.5 * (lo + hi)
        M = min(0.5 * (hi - lo), mid - problem.lo, problem.hi - mid) / problem.epsilon
        u = glue_competitor(problem, mid, M, grid).values
        starts.append((f"run@{mid:.6g}", u))
    best = None
    energies, converged, total_it = {}, [], 0
    for tag, u0 in starts:
        res = newton_minimize(de, u0, tol=tol, max_iter=opt.max_iter)
        total_it += res.iterations
        energies[tag] = res.energy
        if not res.converged:
            continue
        converged.append(tag)
        if best is None or res.energy < best[1].energy:
            best = (tag, res)
    if best is None:
        raise SolverError("all starts failed to converge")
    tag, res = best
    if np.max(np.abs(res.u)) > 1.0 + 1e-12:
        raise SolverError("minimizer left [-1, 1]")
    prof = Profile(grid.x, res.u, energy=res.energy, residual_sup=res.residual)
    order = [tag] + [t for t, _ in starts if t != tag]
    return MinimizeReport(res.energy, prof, res.residual, total_it, order, energies, comp_energy, grid.h,
                          grid.x.size, tol, converged, tol_req)


def homogenized_reference(constants: HomogenizedConstants, well: DoubleWell | None = None, d: int = 1) -> float:
    """sigma_bar = sigma_W sqrt(theta_bar a_bar); for d > 1 with a = Id, sigma_W sqrt(theta_bar)."""
    sw = sigma_w(well or quartic_well())
    if d == 1:
        return sw * math.sqrt(constants.theta_bar * constants.a_bar)
    return sw * math.sqrt(constants.theta_bar)


def rare_event_reference(lam: float, theta_star: float, well: DoubleWell | None = None) -> float:
    """sigma_W sqrt(theta_* lambda)."""
    return sigma_w(well or quartic_well()) * math.sqrt(theta_star * lam)


@dataclass
class PlanarCompetitorEnergy:
    """Energy of the planar competitor over Q_r split as inner + outer.

    ``inner`` integrates over the slab |x1 - S| <= M eps, ``outer`` over the
    rest of Q_r. ``medium_sd`` is the standard deviation of the energy over
    the transverse checkerboard law (d = 2, exact) and ``stderr`` the Monte
    Carlo standard error of the transverse average (d = 3).
    """

    energy: float
    inner: float
    outer: float
    gradient: float
    potential: float
    stderr: float
    medium_sd: float


def _competitor_1d(epsilon: float, r: float, S: float, well: DoubleWell):
    """Nodes of the 1D competitor: q_* inside, linear ramps of width eps at the ends."""
    qs = _star_profile(well, 1.0, 1.0)
    qb = boundary_profile(epsilon, 0.0)
    a, b = -r / 2.0 + epsilon, r / 2.0 - epsilon

    def u(x):
        x = np.asarray(x, dtype=float)
        inner = qs((x - S) / epsilon)
        left = qb(-r / 2.0) + (qs((a - S) / epsilon) - qb(-r / 2.0)) * (x + r / 2.0) / epsilon
        right = qs((b - S) / epsilon) + (qb(r / 2.0) - qs((b - S) / epsilon)) * (x - b) / epsilon
        return np.where(x < a, left, np.where(x > b, right, inner))

    def du(x):
        x = np.asarray(x, dtype=float)
        t = (x - S) / epsilon
        if well.name == "quartic":
            inner = SQRT2 / np.cosh(SQRT2 * t) ** 2 / epsilon
        else:
            prof = _cached_profile(well.name, 1.0, 1.0)
            inner = prof.derivative(t) / epsilon
        left = (qs((a - S) / epsilon) - qb(-r / 2.0)) / epsilon
        right = (qb(r / 2.0) - qs((b - S) / epsilon)) / epsilon
        return np.where(x < a, left, np.where(x > b, right, inner))

    return u, du, (a, b)


def planar_competitor_energy_dD(medium: ProductMediumD, epsilon: float, delta: float, r: float, shift_S: float,
                                M: float, well: DoubleWell | None = None, n_mc: int = 256,
                                mc_seed: int = 0, gl_order: int = 6) -> PlanarCompetitorEnergy:
    """Energy over Q_r of u(x) = q_*((x1 - S)/eps), glued linearly to the datum.

    The x1 integral is split at the eps-ramps, the slab edges S +- M eps and
    every delta-cell edge of both the stripe (integers) and the transverse
    checkerboard (half-integers), so each piece sees constant coefficients.
    The transverse average is a full delta-cell sum for d = 2 and a Monte
    Carlo average over ``n_mc`` transverse points for d = 3.

    Raises
    ------
    ValueError
        If theta^stripe is not identically 1 on [S - M eps, S + M eps].
    """
    well = well or quartic_well()
    d = medium.d
    lo_s, hi_s = shift_S - M * epsilon, shift_S + M * epsilon
    if lo_s < -r / 2.0 or hi_s > r / 2.0:
        raise ValueError("slab exits the cube")
    if not medium.stripe.flat_on(lo_s / delta, hi_s / delta):
        raise ValueError("stripe not flat on the required window")
    u, du, (ra, rb) = _competitor_1d(epsilon, r, shift_S, well)
    # potential decays like exp(-2 sqrt2 |t|); beyond 30 eps it is below roundoff
    cut_lo = max(-r / 2.0, shift_S - 30.0 * epsilon)
    cut_hi = min(r / 2.0, shift_S + 30.0 * epsilon)
    pts = {-r / 2.0, r / 2.0, ra, rb, lo_s, hi_s, cut_lo, cut_hi}
    k0, k1 = math.floor(cut_lo / delta), math.ceil(cut_hi / delta)
    pts.update((np.arange(k0, k1 + 1) * delta).tolist())
    pts.update(((np.arange(k0, k1 + 1) - 0.5) * delta).tolist())
    br = np.array(sorted(p for p in pts if -r / 2.0 <= p <= r / 2.0))
    xg, wg = np.polynomial.legendre.leggauss(gl_order)
    half = 0.5 * np.diff(br)
    mid = 0.5 * (br[:-1] + br[1:])
    X = mid[:, None] + half[:, None] * xg[None, :]
    Wt = half[:, None] * wg[None, :]
    grad_piece = np.sum(Wt * 0.5 * epsilon * du(X) ** 2, axis=1)
    pot_piece = np.sum(Wt * well(u(X)), axis=1) / epsilon
    in_core = (mid >= cut_lo) & (mid <= cut_hi)
    stripe_vals = np.ones(mid.size)
    stripe_vals[in_core] = medium.stripe(mid[in_core] / delta)
    z1 = np.floor(mid / delta + 0.5).astype(np.int64)
    # transverse sums of theta~ over the (d-1)-face of the cube, per x1 cell
    side = r ** (d - 1)
    tz = np.arange(math.floor(-r / 2.0 / delta + 0.5), math.floor(r / 2.0 / delta + 0.5) + 1)
    wz = np.minimum((tz + 0.5) * delta, r / 2.0) - np.maximum((tz - 0.5) * delta, -r / 2.0)
    keep = wz > 0
    tz, wz = tz[keep], wz[keep]
    uniq, inv = np.unique(z1[in_core], return_inverse=True)
    T = np.full(mid.size, float(side))
    stderr = 0.0
    sd = 0.0
    hh = medium.h
    if d == 2:
        grid = np.empty((uniq.size, tz.size))
        for j, z2 in enumerate(tz):
            cells = np.column_stack([uniq, np.full(uniq.size, z2)])
            grid[:, j] = medium.transverse_cells(cells)
        T[in_core] = (grid @ wz)[inv]
        coef = np.zeros(uniq.size)
        np.add.at(coef, inv, stripe_vals[in_core] * pot_piece[in_core])
        sd = float(hh * np.sqrt(np.sum(coef**2) * np.sum(wz**2)))
    else:
        rng = np.random.Generator(np.random.Philox(key=mc_seed))
        y = rng.uniform(-r / 2.0, r / 2.0, size=(n_mc, 2))
        zy = np.floor(y / delta + 0.5).astype(np.int64)
        samples = np.empty((uniq.size, n_mc))
        for k in range(n_mc):
            cells = np.column_stack([uniq, np.full(uniq.size, zy[k, 0]), np.full(uniq.size, zy[k, 1])])
            samples[:, k] = medium.transverse_cells(cells) * side
        T[in_core] = samples.mean(axis=1)[inv]
        coef = np.zeros(uniq.size)
        np.add.at(coef, inv, stripe_vals[in_core] * pot_piece[in_core])
        per_sample = coef @ samples
        stderr = float(per_sample.std(ddof=1) / math.sqrt(n_mc))
    grad = side * grad_piece
    pot = stripe_vals * T * pot_piece
    total = grad + pot
    inner_mask = (mid >= lo_s) & (mid <= hi_s)
    return PlanarCompetitorEnergy(float(total.sum()), float(total[inner_mask].sum()),
                                  float(total[~inner_mask].sum()), float(grad.sum()), float(pot.sum()),
                                  stderr, sd)
