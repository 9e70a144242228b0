"""Homogenized constants, 1D correctors, H^-1 norms and the Sub/Osc diagnostics.

Cubes are Q_R(x) = x + (-R/2, R/2)^d, averages are volume normalized, and the
H^-1 norm of f on U is (avg_U |grad w|^2)^(1/2) with -Laplace(w) = f, w = 0 on
the boundary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import cg, splu
from scipy.stats import binomtest

from .media import CellLaw, Checkerboard2D, Medium1D, sample_checkerboard, sample_checkerboard_2d
from .rng import derive_seed

# ---------------------------------------------------------------------------
# homogenized constants and the 1D corrector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HomogenizedConstants:
    """Effective gradient coefficient a_bar and mean potential weight theta_bar."""

    a_bar: float
    theta_bar: float


def homogenized_constants_1d(source, min_cells: int = 10_000) -> HomogenizedConstants:
    """a_bar = 1 / E[1/a] and theta_bar = E[theta].

    Parameters
    ----------
    source : CellLaw or Medium1D
        A law gives the exact values. A sampled medium gives the empirical
        values on its window: the harmonic mean of a over the interval, which
        is the exact effective coefficient of the 1D Dirichlet cell problem,
        and the average of theta.
    min_cells : int
        Minimum window size for the empirical mode.
    """
    if isinstance(source, CellLaw):
        return HomogenizedConstants(source.a_bar(), source.theta_bar())
    if isinstance(source, Medium1D):
        if source.n_cells < min_cells:
            raise ValueError(f"window of {source.n_cells} cells is below {min_cells}")
        a = source.a_cells
        return HomogenizedConstants(float(a.size / np.sum(1.0 / a)), float(np.mean(source.theta_cells)))
    raise TypeError("expected a CellLaw or a Medium1D")


@dataclass
class Corrector1D:
    """Piecewise-linear corrector phi with phi' = a_bar / a - 1 and phi(0) = 0.

    In one dimension the flux corrector is a 1x1 antisymmetric matrix and
    hence identically zero; ``sigma`` reports it.
    """

    breaks: np.ndarray
    values: np.ndarray
    a_pieces: np.ndarray
    a_bar: float
    sigma: float = 0.0

    def __call__(self, y):
        return np.interp(y, self.breaks, self.values)

    def slope(self, y):
        i = np.clip(np.searchsorted(self.breaks, y, side="right") - 1, 0, self.a_pieces.size - 1)
        return self.a_bar / self.a_pieces[i] - 1.0

    def flux(self, y):
        i = np.clip(np.searchsorted(self.breaks, y, side="right") - 1, 0, self.a_pieces.size - 1)
        return self.a_pieces[i] * (1.0 + self.slope(y))


def corrector_phi_1d(medium: Medium1D, interval, a_bar: float) -> Corrector1D:
    """The 1D corrector on ``interval``, normalized so phi(0) = 0.

    If 0 lies outside the interval, phi vanishes at the left end instead.
    """
    lo, hi = float(interval[0]), float(interval[1])
    breaks, a, _ = medium.pieces(lo, hi)
    slopes = a_bar / a - 1.0
    vals = np.concatenate([[0.0], np.cumsum(slopes * np.diff(breaks))])
    if lo <= 0.0 <= hi:
        vals = vals - np.interp(0.0, breaks, vals)
    return Corrector1D(breaks, vals, a, float(a_bar))


def _pl_moments(breaks, vals):
    """Integrals of a piecewise-linear function and its square, batched on axis -1."""
    h = np.diff(breaks)
    v0, v1 = vals[..., :-1], vals[..., 1:]
    i1 = np.sum(h * (v0 + v1), axis=-1) / 2.0
    i2 = np.sum(h * (v0 * v0 + v0 * v1 + v1 * v1), axis=-1) / 3.0
    return i1, i2


# ---------------------------------------------------------------------------
# H^-1 norms
# ---------------------------------------------------------------------------


def _p1_norm_sq(nodes, loads):
    """b^T K^-1 b for the P1 Dirichlet stiffness on ``nodes``; batched loads."""
    h = np.diff(nodes)
    k = 1.0 / h
    diag = k[:-1] + k[1:]
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = -k[1:-1]
    ab[1] = diag
    ab[2, :-1] = -k[1:-1]
    b = np.atleast_2d(loads)
    w = solve_banded((1, 1), ab, b.T, check_finite=False).T
    return np.sum(b * w, axis=-1), w


def h_minus_one_norm(f, domain, d: int = 1, n: int = 4096, return_solution: bool = False, rtol: float = 1e-12):
    """Volume-normalized H^-1 norm with zero Dirichlet data.

    Parameters
    ----------
    f : ndarray or callable
        d = 1: nodal values on the uniform grid of ``domain`` with the end
        nodes included, shape (..., n + 1); leading axes are batch axes.
        d = 2: nodal values of shape (n1 + 1, n2 + 1).
        A callable is sampled on a uniform grid with ``n`` intervals per axis.
    domain : (lo, hi) or ((lo1, hi1), (lo2, hi2))
    d : {1, 2}
    return_solution : bool
        Also return the discrete potential w.

    Notes
    -----
    d = 1 uses P1 finite elements: tridiagonal stiffness, consistent mass
    load. d = 2 uses the five-point Laplacian solved by conjugate gradients.
    In both cases the norm squared equals avg f w, which equals avg |grad w|^2.
    """
    if d == 1:
        lo, hi = float(domain[0]), float(domain[1])
        if callable(f):
            f = f(np.linspace(lo, hi, n + 1))
        f = np.asarray(f, dtype=float)
        m = f.shape[-1] - 1
        if m < 2:
            raise ValueError("need at least two intervals")
        x = np.linspace(lo, hi, m + 1)
        hx = (hi - lo) / m
        b = hx / 6.0 * (f[..., :-2] + 4.0 * f[..., 1:-1] + f[..., 2:])
        sq, w = _p1_norm_sq(x, b.reshape(-1, m - 1))
        val = np.sqrt(np.maximum(sq, 0.0) / (hi - lo)).reshape(f.shape[:-1])
        val = float(val) if val.ndim == 0 else val
        if return_solution:
            W = np.zeros(f.shape[:-1] + (m + 1,))
            W[..., 1:-1] = w.reshape(f.shape[:-1] + (m - 1,))
            return val, W
        return val
    if d == 2:
        (a0, a1), (b0, b1) = domain
        if callable(f):
            X, Y = np.meshgrid(np.linspace(a0, a1, n + 1), np.linspace(b0, b1, n + 1), indexing="ij")
            f = f(X, Y)
        f = np.asarray(f, dtype=float)
        n1, n2 = f.shape[0] - 1, f.shape[1] - 1
        hx, hy = (a1 - a0) / n1, (b1 - b0) / n2
        A = _laplacian_2d(n1, n2, hx, hy)
        rhs = f[1:-1, 1:-1].ravel()
        if not np.any(rhs):
            w = np.zeros_like(rhs)
        else:
            w, info = cg(A, rhs, rtol=rtol, atol=0.0, maxiter=20 * (n1 + n2) * 10)
            if info != 0:
                raise RuntimeError("conjugate gradient did not converge")
        area = (a1 - a0) * (b1 - b0)
        val = math.sqrt(max(float(hx * hy * rhs @ w), 0.0) / area)
        if return_solution:
            W = np.zeros_like(f)
            W[1:-1, 1:-1] = w.reshape(n1 - 1, n2 - 1)
            return val, W
        return val
    raise ValueError("d must be 1 or 2")


def _laplacian_2d(n1, n2, hx, hy):
    def lap1(m, h):
        e = np.ones(m - 1)
        return sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1]) / (h * h)

    I1, I2 = sp.identity(n1 - 1), sp.identity(n2 - 1)
    return (sp.kron(lap1(n1, hx), I2) + sp.kron(I1, lap1(n2, hy))).tocsr()


def h_minus_one_pairing_1d(f, v, domain) -> tuple[float, float]:
    """(avg f v, avg |v'|^2) with the same discrete inner products as the norm."""
    lo, hi = float(domain[0]), float(domain[1])
    f, v = np.asarray(f, dtype=float), np.asarray(v, dtype=float)
    m = f.size - 1
    hx = (hi - lo) / m
    b = hx / 6.0 * (f[:-2] + 4.0 * f[1:-1] + f[2:])
    return float(b @ v[1:-1] / (hi - lo)), float(np.sum(np.diff(v) ** 2) / hx / (hi - lo))


def h_minus_one_norm_cells(breaks, values, per_unit: int = 8) -> np.ndarray:
    """H^-1 norm of a piecewise-constant function on [breaks[0], breaks[-1]].

    Each piece is refined into ceil(length * per_unit) equal P1 elements, so
    every element lies inside one piece and the load vector is exact.
    ``values`` may carry leading batch axes.
    """
    breaks = np.asarray(breaks, dtype=float)
    values = np.asarray(values, dtype=float)
    lens = np.diff(breaks)
    counts = np.maximum(np.ceil(lens * per_unit - 1e-9).astype(int), 1)
    nodes = [breaks[:1]]
    for i, c in enumerate(counts):
        nodes.append(np.linspace(breaks[i], breaks[i + 1], c + 1)[1:])
    nodes = np.concatenate(nodes)
    piece_of = np.repeat(np.arange(lens.size), counts)
    fe = values[..., piece_of]
    h = np.diff(nodes)
    load = fe[..., :-1] * h[:-1] / 2.0 + fe[..., 1:] * h[1:] / 2.0
    sq, _ = _p1_norm_sq(nodes, load.reshape(-1, load.shape[-1]))
    L = breaks[-1] - breaks[0]
    return np.sqrt(np.maximum(sq, 0.0) / L).reshape(values.shape[:-1])


def h_minus_one_norm_cells_exact(breaks, values) -> np.ndarray:
    """Closed form in 1D: the norm is the L2 deviation of the running integral.

    With F(x) the integral of f from the left end, w' = mean(F) - F, so the
    norm squared is avg (F - avg F)^2. Exact for piecewise-constant f.
    """
    breaks = np.asarray(breaks, dtype=float)
    values = np.asarray(values, dtype=float)
    F = np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(values * np.diff(breaks), axis=-1)], axis=-1)
    i1, i2 = _pl_moments(breaks, F)
    L = breaks[-1] - breaks[0]
    return np.sqrt(np.maximum(i2 / L - (i1 / L) ** 2, 0.0))


# ---------------------------------------------------------------------------
# Sub and Osc
# ---------------------------------------------------------------------------


def radius_grid(r: float, R_max: float) -> np.ndarray:
    """{r} together with the integers and the dyadic multiples r 2^k in [r, R_max]."""
    if R_max < r:
        raise ValueError("R_max must be at least r")
    pts = {float(r)}
    pts.update(float(k) for k in range(math.ceil(r), int(math.floor(R_max)) + 1))
    R = float(r)
    while R <= R_max + 1e-12:
        pts.add(R)
        R *= 2.0
    return np.array(sorted(p for p in pts if r - 1e-12 <= p <= R_max + 1e-12))


def _cell_breaks(medium: Medium1D, lo: float, hi: float):
    if not medium.covers(lo, hi):
        raise IndexError(f"window does not cover Q_R = [{lo}, {hi}]")
    e = medium.edges()
    inner = e[(e > lo) & (e < hi)]
    breaks = np.concatenate([[lo], inner, [hi]])
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    return breaks, medium.cell_index(mids) - medium.z_min


def sub_values(a_cells, medium: Medium1D, x: float, R_grid, a_bar: float) -> np.ndarray:
    """R^-1 (avg_{Q_R(x)} |phi - avg phi|^2)^(1/2) for each R, batched over rows of a_cells."""
    a_cells = np.atleast_2d(a_cells)
    out = np.empty((a_cells.shape[0], len(R_grid)))
    for k, R in enumerate(R_grid):
        breaks, idx = _cell_breaks(medium, x - R / 2.0, x + R / 2.0)
        slopes = a_bar / a_cells[:, idx] - 1.0
        phi = np.concatenate([np.zeros((a_cells.shape[0], 1)), np.cumsum(slopes * np.diff(breaks), axis=1)], axis=1)
        i1, i2 = _pl_moments(breaks, phi)
        var = np.maximum(i2 / R - (i1 / R) ** 2, 0.0)
        out[:, k] = np.sqrt(var) / R
    return out


def osc_values(theta_cells, medium: Medium1D, x: float, R_grid, theta_bar: float, per_unit: int = 8) -> np.ndarray:
    """R^-1 ||theta - theta_bar||_{H^-1(Q_R(x))} for each R, batched over rows."""
    theta_cells = np.atleast_2d(theta_cells)
    out = np.empty((theta_cells.shape[0], len(R_grid)))
    per = per_unit / medium.cell_width
    for k, R in enumerate(R_grid):
        breaks, idx = _cell_breaks(medium, x - R / 2.0, x + R / 2.0)
        out[:, k] = h_minus_one_norm_cells(breaks, theta_cells[:, idx] - theta_bar, per_unit=per) / R
    return out


def sub_quantity(medium: Medium1D, x: float, r: float, R_max: float, a_bar: float) -> float:
    """Truncated Sub_x(r): the max over the radius grid."""
    R = radius_grid(r, R_max)
    return float(sub_values(medium.a_cells, medium, x, R, a_bar).max())


def osc_quantity(medium: Medium1D, x: float, r: float, R_max: float, theta_bar: float, per_unit: int = 8) -> float:
    """Truncated Osc_x(r): the max over the radius grid."""
    R = radius_grid(r, R_max)
    return float(osc_values(medium.theta_cells, medium, x, R, theta_bar, per_unit).max())


@dataclass
class SubOscReport:
    """Sub and Osc values on the radius grid used for the truncated sup."""

    x: float
    r_min: float
    R_max: float
    dyadic_R: list
    sub_values: list
    osc_values: list

    @property
    def sub(self) -> float:
        return max(self.sub_values)

    @property
    def osc(self) -> float:
        return max(self.osc_values)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "r_min", "R_max", "R", "sub", "osc"])
            for R, s, o in zip(self.dyadic_R, self.sub_values, self.osc_values):
                w.writerow([self.x, self.r_min, self.R_max, R, repr(float(s)), repr(float(o))])
        return path


def sub_osc_report(medium: Medium1D, x: float, r: float, R_max: float, a_bar: float, theta_bar: float) -> SubOscReport:
    R = radius_grid(r, R_max)
    s = sub_values(medium.a_cells, medium, x, R, a_bar)[0]
    o = osc_values(medium.theta_cells, medium, x, R, theta_bar)[0]
    return SubOscReport(float(x), float(r), float(R_max), R.tolist(), s.tolist(), o.tolist())


def osc_quantity_2d(field2d: Checkerboard2D, x, r: float, R_max: float, theta_bar: float,
                    per_unit: int = 8, R_grid=None, _cache: dict | None = None) -> float:
    """Truncated Osc_x(r) in two dimensions for a checkerboard theta.

    Nodal data are averages of the (up to four) adjacent unit squares; the
    node spacing is 1 / per_unit and cube corners must sit on half-integers
    or integers so that cell edges fall on nodes.
    """
    R_list = radius_grid(r, R_max) if R_grid is None else np.asarray(R_grid, dtype=float)
    best = 0.0
    for R in R_list:
        n = int(round(R * per_unit))
        lo1, lo2 = x[0] - R / 2.0, x[1] - R / 2.0
        g1 = lo1 + np.arange(n + 1) / per_unit
        g2 = lo2 + np.arange(n + 1) / per_unit
        # four neighbouring sub-square centres per node
        off = 0.5 / per_unit
        vals = np.zeros((n + 1, n + 1))
        for s1 in (-off, off):
            for s2 in (-off, off):
                Z1 = np.floor(g1 + s1 + 0.5).astype(np.int64)
                Z2 = np.floor(g2 + s2 + 0.5).astype(np.int64)
                vals += field2d.value_at_cells(Z1[:, None], Z2[None, :])
        f = vals / 4.0 - theta_bar
        if _cache is not None:
            key = (n, R)
            if key not in _cache:
                h = 1.0 / per_unit
                _cache[key] = splu(_laplacian_2d(n, n, h, h).tocsc())
            rhs = f[1:-1, 1:-1].ravel()
            w = _cache[key].solve(rhs)
            norm = math.sqrt(max(float(rhs @ w) / (per_unit**2) / (R * R), 0.0))
        else:
            norm = h_minus_one_norm(f, ((lo1, lo1 + R), (lo2, lo2 + R)), d=2)
        best = max(best, norm / R)
    return best


# ---------------------------------------------------------------------------
# tail probabilities
# ---------------------------------------------------------------------------


@dataclass
class TailEstimate:
    """Monte-Carlo estimate of P{quantity_0(r) > nu} with a Wilson interval."""

    quantity: str
    r: float
    nu: float
    n: int
    hits: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    seed0: int
    values: np.ndarray = field(default=None, repr=False)

    def row(self):
        return [self.quantity, self.r, self.nu, self.n, self.hits, self.p_hat, self.ci_lo, self.ci_hi, self.seed0]


TAIL_COLUMNS = ["quantity", "r", "nu", "n", "hits", "p_hat", "ci_lo", "ci_hi", "seed0"]


def wilson_interval(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(hits), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def sample_quantity(quantity: str, r: float, n_samples: int, law: CellLaw, seed0: int,
                    R_max: float | None = None, x: float = 0.0) -> np.ndarray:
    """Per-sample values of Sub_0(r) or Osc_0(r) for i.i.d. checkerboards.

    Sample i uses seed derive_seed(seed0, "tail", quantity, i), so any subset
    of samples can be recomputed independently.
    """
    quantity = quantity.lower()
    if quantity not in ("sub", "osc"):
        raise ValueError("quantity must be 'sub' or 'osc'")
    R_max = 4.0 * r if R_max is None else R_max
    zlo = math.floor(x - R_max / 2.0) - 1
    zhi = math.ceil(x + R_max / 2.0) + 1
    grid = radius_grid(r, R_max)
    A = np.empty((n_samples, zhi - zlo + 1))
    T = np.empty_like(A)
    ref = None
    for i in range(n_samples):
        m = sample_checkerboard(derive_seed(seed0, "tail", quantity, i), (zlo, zhi), law)
        A[i], T[i] = m.a_cells, m.theta_cells
        ref = m
    if quantity == "sub":
        vals = sub_values(A, ref, x, grid, law.a_bar())
    else:
        vals = osc_values(T, ref, x, grid, law.theta_bar())
    return vals.max(axis=1)


def tail_probability(quantity: str, r: float, nu: float, n_samples: int, law: CellLaw, seed0: int = 0,
                     R_max: float | None = None, values: np.ndarray | None = None) -> TailEstimate:
    """Estimate P{quantity_0(r) > nu} over i.i.d. checkerboard samples.

    Parameters
    ----------
    quantity : {"sub", "osc"}
    r, nu : float
    n_samples : int
        At least 100.
    law : CellLaw
    seed0 : int
    R_max : float, optional
        Truncation of the sup, default 4 r.
    values : ndarray, optional
        Precomputed sample values (reused across several nu).
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    if values is None:
        values = sample_quantity(quantity, r, n_samples, law, seed0, R_max)
    hits = int(np.sum(values > nu))
    lo, hi = wilson_interval(hits, n_samples)
    return TailEstimate(quantity.lower(), float(r), float(nu), int(n_samples), hits, hits / n_samples, lo, hi,
                        int(seed0), values)


def write_tail_csv(estimates: Sequence[TailEstimate], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TAIL_COLUMNS)
        for e in estimates:
            w.writerow([e.quantity, repr(e.r), repr(e.nu), e.n, e.hits, repr(e.p_hat), repr(e.ci_lo),
                        repr(e.ci_hi), e.seed0])
    return path


def calibrate_nu(values_by_r: dict, p_lo: float = 1e-3, p_hi: float = 0.5, target: float | None = None) -> float:
    """Threshold nu putting every empirical tail inside [p_lo, p_hi].

    Bisects on nu so that the tail at the largest r is near ``target``
    (default 3 p_lo), then checks the range at every r.

    Raises
    ------
    ValueError
        If no threshold satisfies the range at all radii.
    """
    rs = sorted(values_by_r)
    target = 3.0 * p_lo if target is None else target
    big = np.asarray(values_by_r[rs[-1]])
    lo, hi = 0.0, float(max(np.max(np.asarray(v)) for v in values_by_r.values()))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.mean(big > mid) > target:
            lo = mid
        else:
            hi = mid
    nu = lo
    ps = [float(np.mean(np.asarray(values_by_r[r]) > nu)) for r in rs]
    if not all(p_lo <= p <= p_hi for p in ps):
        raise ValueError(f"no admissible nu: tails {ps} at nu={nu}")
    return nu


@dataclass
class LineFit:
    slope: float
    intercept: float
    r2: float


def fit_line(x, y) -> LineFit:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    A = np.vstack([x, np.ones_like(x)]).T
    (m, c), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (m * x + c)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(res**2) / ss if ss > 0 else 1.0
    return LineFit(float(m), float(c), float(r2))


# ---------------------------------------------------------------------------
# scale conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailModel:
    """P(r) = C exp(-c r^d)."""

    C: float
    c: float
    d: int = 1

    def log_prob(self, r):
        r = np.asarray(r, dtype=float)
        if self.C <= 0:
            return np.full(r.shape, -np.inf)
        return math.log(self.C) - self.c * r**self.d

    def __call__(self, r):
        return np.exp(self.log_prob(r))


@dataclass
class ScaleCheck:
    eps: np.ndarray
    log_values: np.ndarray
    verdict: str

    @property
    def values(self):
        return np.exp(self.log_values)


def check_scale_condition(tail_model: TailModel, delta: Callable[[float], float], eps_grid, window: int = 5) -> ScaleCheck:
    """Evaluate eps^-d P(eps / delta(eps)) along a decreasing eps grid.

    The verdict is ``vanishing`` if the logged values decrease strictly over
    the last ``window`` grid points, ``diverging`` if they increase strictly,
    and ``inconclusive`` otherwise. A zero tail is always vanishing.
    """
    eps = np.asarray(eps_grid, dtype=float)
    if eps.size < 2 or np.any(np.diff(eps) >= 0):
        raise ValueError("eps_grid must be strictly decreasing")
    d = tail_model.d
    logs = np.array([-d * math.log(e) + float(tail_model.log_prob(e / delta(e))) for e in eps])
    if tail_model.C <= 0:
        return ScaleCheck(eps, logs, "vanishing")
    tail = logs[-window:]
    steps = np.diff(tail)
    if np.all(steps < 0):
        verdict = "vanishing"
    elif np.all(steps > 0):
        verdict = "diverging"
    else:
        verdict = "inconclusive"
    return ScaleCheck(eps, logs, verdict)


@dataclass
class AdmissibleScale:
    """Step rule delta*(eps) = eps / R_j on eps in [2^-(j+1)/(2d), 2^-j/(2d))."""

    R: dict
    d: int = 1

    def band(self, eps: float) -> int:
        j = int(math.floor(-2 * self.d * math.log2(eps)))
        return max(j, 1)

    def __call__(self, eps: float) -> float:
        j = self.band(eps)
        if j not in self.R:
            raise ValueError(f"eps={eps} lies below the constructed range (band {j})")
        return eps / self.R[j]


def construct_admissible_scale(sub_tail: Callable[[float, float], float], osc_tail: Callable[[float, float], float],
                               ladder: Sequence[float], j_max: int, d: int = 1) -> AdmissibleScale:
    """Pick R_j >= j from ``ladder`` with both tails at level 2^-j below 2^-j.

    Parameters
    ----------
    sub_tail, osc_tail : callable (R, nu) -> probability
        Empirical or fitted tail estimates.
    ladder : increasing radii
    j_max : int
        Last band to construct.
    """
    ladder = sorted(float(R) for R in ladder)
    R = {}
    for j in range(1, j_max + 1):
        level = 2.0**-j
        for cand in ladder:
            if cand < j:
                continue
            if sub_tail(cand, level) <= level and osc_tail(cand, level) <= level:
                R[j] = cand
                break
        else:
            raise ValueError(f"ladder exhausted before a quantile was found for j={j}")
    return AdmissibleScale(R, d)
