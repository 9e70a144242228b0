"""Monte-Carlo regime sweeps and the large-deviations apparatus.

Every random draw is keyed by ``derive_seed(seed0, ...)`` labels, so each
sample is a pure function of the configuration and its index. Parallel runs
fold their results in index order and reproduce serial output bit for bit.
"""

from __future__ import annotations

import csv
import math
import warnings
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .homog import (
    HomogenizedConstants,
    LineFit,
    calibrate_nu,
    fit_line,
    tail_probability,
    wilson_interval,
)
from .media import (
    CellLaw,
    LiouvilleStripe,
    Medium1D,
    RunLengthTable,
    locate_excursion,
    run_length_tail,
    sample_checkerboard,
    sample_lamp_stripe,
)
from .rng import derive_seed, uniforms
from .solver import (
    CellProblem1D,
    MinimizeOptions,
    SolverError,
    homogenized_reference,
    minimize_cell_problem,
    rare_event_reference,
)
from .wells import quartic_well, sigma_w, well_from_name

SQRT2 = math.sqrt(2.0)


def parallel_map(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Ordered map, serial for ``jobs <= 1`` and over worker processes otherwise."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# ---------------------------------------------------------------------------
# Scaling rules delta(eps)
# ---------------------------------------------------------------------------

_G_CATALOG = {
    "log": lambda e: math.log(1.0 / e),
    "log2": lambda e: math.log2(1.0 / e),
    "loglog": lambda e: math.log(math.log(1.0 / e)),
    "sqrt_log": lambda e: math.sqrt(math.log(1.0 / e)),
}


@dataclass(frozen=True)
class ScalingRule:
    """delta(eps) = eps^beta (family "power") or eps / (c g(eps)) (family "eps_over_g")."""

    family: str = "power"
    beta: float = 3.0
    g: str = "log"
    c: float = 1.0

    def __post_init__(self):
        if self.family not in ("power", "eps_over_g"):
            raise ValueError(f"unknown scaling family {self.family!r}")
        if self.family == "eps_over_g" and self.g not in _G_CATALOG:
            raise ValueError(f"unknown g {self.g!r}; choose from {sorted(_G_CATALOG)}")

    def __call__(self, eps: float) -> float:
        if self.family == "power":
            return eps**self.beta
        return eps / (self.c * _G_CATALOG[self.g](eps))

    def to_dict(self) -> dict:
        if self.family == "power":
            return {"family": "power", "beta": self.beta}
        return {"family": "eps_over_g", "g": self.g, "c": self.c}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingRule":
        return cls(**d)


# ---------------------------------------------------------------------------
# Regime sweep
# ---------------------------------------------------------------------------


@dataclass
class RegimeSweepConfig:
    """Inputs of a regime sweep.

    Attributes
    ----------
    law : CellLaw
    well : str
        Well name, see ``well_from_name``.
    eps_grid : tuple of float
        Strictly decreasing.
    scaling : ScalingRule
    rho : float
        Half-width of the cell interval.
    n_samples : int
        Media per eps, at least 8.
    seed0 : int
    M_min : float
        Minimal favorable run, in eps units, that seeds a multi-start.
    """

    law: CellLaw
    well: str = "quartic"
    eps_grid: tuple = (0.1, 0.05, 0.02)
    scaling: ScalingRule = field(default_factory=ScalingRule)
    rho: float = 0.5
    n_samples: int = 32
    seed0: int = 0
    M_min: float = 2.0

    def __post_init__(self):
        self.eps_grid = tuple(float(e) for e in self.eps_grid)
        if len(self.eps_grid) == 0 or any(b >= a for a, b in zip(self.eps_grid, self.eps_grid[1:])):
            raise ValueError("eps_grid must be non-empty and strictly decreasing")
        if self.n_samples < 8:
            raise ValueError("n_samples must be at least 8")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        well_from_name(self.well)

    def to_dict(self) -> dict:
        return {"law": self.law.to_dict(), "well": self.well, "eps_grid": list(self.eps_grid),
                "scaling": self.scaling.to_dict(), "rho": self.rho, "n_samples": self.n_samples,
                "seed0": self.seed0, "M_min": self.M_min}

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeSweepConfig":
        d = dict(d)
        d["law"] = CellLaw.from_dict(d["law"])
        if "scaling" in d:
            d["scaling"] = ScalingRule.from_dict(d["scaling"])
        return cls(**d)


SWEEP_COLUMNS = ["eps", "delta", "sample", "seed", "status", "energy", "residual", "tol", "iterations", "start",
                 "competitor_energy", "lower_bound", "h", "n_nodes", "error"]


@dataclass
class SweepSample:
    eps: float
    delta: float
    sample: int
    seed: int
    status: str
    energy: float = math.nan
    residual: float = math.nan
    tol: float = math.nan
    iterations: int = 0
    start: str = ""
    competitor_energy: float = math.nan
    lower_bound: float = math.nan
    h: float = math.nan
    n_nodes: int = 0
    error: str = ""

    def row(self) -> list:
        return [getattr(self, c) for c in SWEEP_COLUMNS]


def invariant_slack(h: float, C: float = 1.0) -> float:
    """Discretization allowance C h in the energy lower bound."""
    return C * h


def _sweep_task(args) -> SweepSample:
    cfg_dict, i_eps, i = args
    cfg = RegimeSweepConfig.from_dict(cfg_dict)
    eps = cfg.eps_grid[i_eps]
    delta = cfg.scaling(eps)
    seed = derive_seed(cfg.seed0, "sweep", repr(eps), i)
    well = well_from_name(cfg.well)
    zlo = math.floor(-cfg.rho / delta) - 2
    zhi = math.ceil(cfg.rho / delta) + 2
    out = SweepSample(eps, delta, i, seed, "failed")
    try:
        med = sample_checkerboard(seed, (zlo, zhi), cfg.law)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob = CellProblem1D(eps, delta, cfg.rho, med, well)
        rep = minimize_cell_problem(prob, MinimizeOptions(M_min=cfg.M_min))
    except (SolverError, ValueError, IndexError, ArithmeticError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        return out
    b = cfg.law.bounds()
    out.status = "ok"
    out.energy = rep.energy
    out.residual = rep.residual_sup
    out.tol = rep.tol
    out.iterations = rep.iterations
    out.start = rep.starts_used[0]
    out.competitor_energy = rep.competitor_energy
    out.lower_bound = rare_event_reference(b.lam, b.th_lo, well) - invariant_slack(rep.h)
    out.h = rep.h
    out.n_nodes = rep.n_nodes
    return out


@dataclass
class SweepSummary:
    eps: float
    delta: float
    n_ok: int
    n_failed: int
    median: float
    q1: float
    q3: float
    dist_bar: float
    dist_rare: float
    invariants_ok: bool


@dataclass
class SweepResult:
    config: RegimeSweepConfig
    samples: list
    summary: list
    sigma_bar: float
    sigma_rare: float
    verdict: str
    failed_fraction: float

    @property
    def failed(self) -> bool:
        """True when more than 10% of the samples failed."""
        return self.failed_fraction > 0.10

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for s in self.samples:
                w.writerow([repr(v) if isinstance(v, float) else v for v in s.row()])
        return path

    def write_summary_csv(self, path) -> Path:
        path = Path(path)
        cols = list(SweepSummary.__dataclass_fields__)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for s in self.summary:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(s).values()])
        return path

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "sigma_bar": self.sigma_bar, "sigma_rare": self.sigma_rare,
                "failed_fraction": self.failed_fraction, "failed": self.failed,
                "per_eps": [asdict(s) for s in self.summary]}


def regime_verdict(dist_bar: Sequence[float], dist_rare: Sequence[float], band: float = 0.05) -> str:
    """Classify a sweep from relative distances to the two references.

    "homogenization trend" when the last eps is within ``band`` of sigma_bar
    and the distance shrinks over the last three eps values; "rare-events
    trend" symmetrically; otherwise "inconclusive".
    """
    def trend(d):
        tail = list(d)[-3:]
        return all(b < a for a, b in zip(tail, tail[1:]))

    if dist_bar and dist_bar[-1] <= band and trend(dist_bar):
        return "homogenization trend"
    if dist_rare and dist_rare[-1] <= band and trend(dist_rare):
        return "rare-events trend"
    return "inconclusive"


def regime_sweep(config: RegimeSweepConfig, jobs: int = 1) -> SweepResult:
    """Minimize the cell problem over sampled media for every eps.

    Per-sample solver failures are recorded and the sweep continues; the
    result flags itself as failed when more than 10% of samples fail.
    """
    cd = config.to_dict()
    tasks = [(cd, j, i) for j in range(len(config.eps_grid)) for i in range(config.n_samples)]
    samples = parallel_map(_sweep_task, tasks, jobs)
    well = well_from_name(config.well)
    consts = HomogenizedConstants(config.law.a_bar(), config.law.theta_bar())
    s_bar = homogenized_reference(consts, well)
    b = config.law.bounds()
    s_rare = rare_event_reference(b.lam, b.th_lo, well)
    summary = []
    for eps in config.eps_grid:
        rows = [s for s in samples if s.eps == eps]
        ok = [s for s in rows if s.status == "ok"]
        e = np.array([s.energy for s in ok])
        if e.size:
            med, q1, q3 = (float(v) for v in np.percentile(e, [50, 25, 75]))
        else:
            med = q1 = q3 = math.nan
        inv = all(s.lower_bound <= s.energy <= s.competitor_energy + 1e-12 and s.residual < s.tol for s in ok)
        summary.append(SweepSummary(eps, config.scaling(eps), len(ok), len(rows) - len(ok), med, q1, q3,
                                    abs(med - s_bar) / s_bar, abs(med - s_rare) / s_rare, inv))
    n_fail = sum(s.status != "ok" for s in samples)
    verdict = regime_verdict([s.dist_bar for s in summary], [s.dist_rare for s in summary])
    return SweepResult(config, samples, summary, s_bar, s_rare, verdict, n_fail / len(samples))


# ---------------------------------------------------------------------------
# Favorable block counting
# ---------------------------------------------------------------------------


@dataclass
class BlockCount:
    """Favorable blocks of a single medium.

    ``positions`` are the block centers x in 2 r Z (macro units).
    """

    X: int
    n_blocks: int
    cells_per_block: int
    positions: np.ndarray


def _block_layout(R: float, r: float, gamma: float) -> tuple[int, int]:
    n = 2.0 * r / gamma
    cells = int(round(n))
    if cells < 1 or abs(n - cells) > 1e-9 * max(1.0, n):
        raise ValueError(f"alignment violation: 2r/gamma = {n} is not an integer number of cells")
    K = math.floor((R - 1.0 - r) / (2.0 * r) + 1e-12)
    if K < 0:
        raise ValueError("R too small for a single block")
    return cells, K


def _block_cells(cells: int, K: int) -> tuple[int, int]:
    # cell z (centered at z, micro units) belongs to block k when its center
    # lies in [(2k-1) n/2, (2k+1) n/2); each block holds exactly n cells
    z0 = math.ceil((-2 * K - 1) * cells / 2.0)
    return z0, z0 + (2 * K + 1) * cells - 1


def count_favorable_blocks(medium: Medium1D, R: float, r: float, gamma: float, target=None) -> BlockCount:
    """Count x in 2rZ, |x| <= R - 1 - r, whose block [x - r, x + r) is favorable.

    A block is favorable when every cell whose center lies in it carries the
    target pair, (lambda, theta_*) by default. With unit cells centered at
    the integers every block holds exactly 2r/gamma cells, and distinct blocks
    share none.

    Raises
    ------
    ValueError
        If 2r/gamma is not an integer (alignment violation).
    """
    cells, K = _block_layout(R, r, gamma)
    z0, z1 = _block_cells(cells, K)
    if medium.offset != -0.5 or medium.cell_width != 1.0:
        raise ValueError("alignment violation: medium must use unit cells centered at the integers")
    b = medium.bounds
    tgt = (b.lam, b.th_lo) if target is None else tuple(target)
    i0 = z0 - medium.z_min
    i1 = z1 - medium.z_min + 1
    if i0 < 0 or i1 > medium.n_cells:
        raise IndexError("medium does not cover the blocks")
    good = (medium.a_cells[i0:i1] == tgt[0]) & (medium.theta_cells[i0:i1] == tgt[1])
    fav = good.reshape(2 * K + 1, cells).all(axis=1)
    pos = 2.0 * r * np.arange(-K, K + 1)
    return BlockCount(int(fav.sum()), 2 * K + 1, cells, pos[fav])


def expected_block_count(R: float, r: float, gamma: float, p: float = 0.25) -> float:
    """Closed form p^(2r/gamma) floor((R-1)/r) (four-point law: p = 1/4)."""
    return p ** (2.0 * r / gamma) * math.floor((R - 1.0) / r + 1e-12)


@dataclass
class BlockCountReport:
    R: float
    r: float
    gamma: float
    p_block: float
    n_blocks: int
    expected: float
    n_samples: int
    mean: float
    var: float
    stderr: float
    z_score: float
    p_half_hat: float
    second_moment_bound: float
    bound_applies: bool
    bound_holds: bool


def block_count_experiment(law: CellLaw, R: float, r: float, gamma: float, n_samples: int, seed0: int = 0,
                           target=None) -> BlockCountReport:
    """Empirical moments of X(R) against the closed form.

    Uses pairs with odd floor((R-1)/r), for which the number of blocks equals
    floor((R-1)/r) exactly.
    """
    cells, K = _block_layout(R, r, gamma)
    z0, z1 = _block_cells(cells, K)
    b = law.bounds()
    tgt = (b.lam, b.th_lo) if target is None else tuple(target)
    p_cell = law.prob_of(tgt)
    X = np.empty(n_samples)
    for i in range(n_samples):
        m = sample_checkerboard(derive_seed(seed0, "blocks", repr((R, r, gamma)), i), (z0, z1), law)
        X[i] = count_favorable_blocks(m, R, r, gamma, tgt).X
    p_block = p_cell**cells
    expected = p_block * (2 * K + 1)
    mean = float(X.mean())
    var = float(X.var(ddof=1))
    se = math.sqrt(expected * (1 - p_block) / n_samples)
    z = (mean - expected) / se if se > 0 else (0.0 if mean == expected else math.inf)
    p_half = float(np.mean(X >= 0.5 * expected))
    bound = 1.0 - 4.0 * var / expected**2 if expected > 0 else -math.inf
    applies = expected >= 2.0
    return BlockCountReport(R, r, gamma, p_block, 2 * K + 1, expected, n_samples, mean, var, se, z, p_half, bound,
                            applies, (not applies) or p_half >= bound)


# ---------------------------------------------------------------------------
# Window energies and large deviations
# ---------------------------------------------------------------------------


def _sech4_antiderivative(y):
    t = np.tanh(y)
    return t - t**3 / 3.0


def window_cell_weights(gamma: float, r: float, q_star: Callable | None = None, well=None):
    """Cells z meeting [-r, r] and w_z = int over the cell of W(q_*).

    Cell z covers [(z - 1/2) gamma, (z + 1/2) gamma) in macro units. For the
    quartic well with q_* = tanh(sqrt(2) s) the weights are exact:
    W(q_*) = sech^4(sqrt(2) s).
    """
    zlo = math.floor(-r / gamma + 0.5)
    zhi = math.ceil(r / gamma - 0.5)
    z = np.arange(zlo, zhi + 1)
    a = np.maximum((z - 0.5) * gamma, -r)
    b = np.minimum((z + 0.5) * gamma, r)
    keep = b > a
    z, a, b = z[keep], a[keep], b[keep]
    if q_star is None:
        w = (_sech4_antiderivative(SQRT2 * b) - _sech4_antiderivative(SQRT2 * a)) / SQRT2
        grad = float((_sech4_antiderivative(SQRT2 * r) - _sech4_antiderivative(-SQRT2 * r)) / SQRT2)
        return z, w, grad
    well = well or quartic_well()
    xg, wg = np.polynomial.legendre.leggauss(16)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    X = mid[:, None] + half[:, None] * xg[None, :]
    w = np.sum(half[:, None] * wg * well(q_star(X)), axis=1)
    s = np.linspace(-r, r, 20001)
    dq = np.gradient(q_star(s), s)
    from scipy.integrate import trapezoid

    grad = float(trapezoid(0.5 * dq**2, s))
    return z, w, grad


def window_energy_Z(medium: Medium1D, gamma: float, r: float, q_star: Callable | None = None, well=None) -> float:
    """Z_gamma = int_{-r}^{r} 1/2 q_*'^2 + theta(s / gamma) W(q_*(s)) ds."""
    z, w, grad = window_cell_weights(gamma, r, q_star, well)
    i = z - medium.z_min
    if medium.offset != -0.5 or medium.cell_width != 1.0:
        raise ValueError("medium must use unit cells centered at the integers")
    if i[0] < 0 or i[-1] >= medium.n_cells:
        raise IndexError("medium does not cover the window")
    return float(grad + np.dot(medium.theta_cells[i], w))


def sample_window_energies(law: CellLaw, gamma: float, r: float, n_samples: int, seed0: int,
                           q_star: Callable | None = None, well=None) -> tuple[np.ndarray, float]:
    """Z_gamma over ``n_samples`` i.i.d. media and its exact mean.

    Sample i is the medium sample_checkerboard(derive_seed(seed0, "Z", gamma, r, i)).
    """
    z, w, grad = window_cell_weights(gamma, r, q_star, well)
    values, probs = law.theta_marginal()
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    Z = np.empty(n_samples)
    for i in range(n_samples):
        u = uniforms(derive_seed(seed0, "Z", repr(gamma), repr(r), i), int(z[0]), z.size)[:, 0]
        th = values[np.minimum(np.searchsorted(cum, u, side="right"), values.size - 1)]
        Z[i] = grad + th @ w
    mean = float(grad + np.dot(values, probs) * w.sum())
    return Z, mean


class LDError(RuntimeError):
    """Raised when the Legendre maximization does not converge."""


@dataclass
class LDQuantities:
    """Tabulated large-deviation quantities of Z_gamma.

    ``L_theta`` and ``L`` are tabulated on ``xi_grid``; ``rates`` maps a
    deviation lambda to L*(-lambda) and ``maximizers`` to the optimal xi.
    """

    r: float
    gamma: float | None
    q_star: str
    xi_grid: np.ndarray
    L_theta: np.ndarray
    L: np.ndarray
    rates: dict
    maximizers: dict
    hoeffding_ok: bool
    convex_ok: bool
    L_theta_fn: Callable = field(repr=False, default=None)
    L_fn: Callable = field(repr=False, default=None)

    def rate(self, lam: float) -> float:
        """L*(-lam), computed on demand when not tabulated."""
        if lam not in self.rates:
            self.rates[lam], self.maximizers[lam] = legendre_at(self.L_fn, -lam)
        return self.rates[lam]


def log_mgf_theta(values, probs) -> Callable:
    """xi -> log E exp(xi (Theta - E Theta)); log cosh(xi/2) for {1, 2} at equal odds."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    mean = float(values @ probs)
    if values.size == 2 and abs(probs[0] - 0.5) < 1e-15:
        half = 0.5 * (values[1] - values[0])

        def L2(xi):
            y = np.abs(half * np.asarray(xi, dtype=float))
            # log cosh without overflow
            return y + np.log1p(np.exp(-2.0 * y)) - math.log(2.0)

        return L2
    logp = np.log(probs)

    def Lg(xi):
        xi = np.asarray(xi, dtype=float)
        return logsumexp(logp + np.multiply.outer(xi, values - mean), axis=-1)

    return Lg


def scaled_cumulant(L_theta: Callable, r: float, q_star: Callable | None = None, well=None,
                    n_nodes: int = 4001) -> Callable:
    """xi -> int_{-r}^{r} L_Theta(xi W(q_*(s))) ds by composite Gauss-Legendre."""
    well = well or quartic_well()
    q = q_star or (lambda s: np.tanh(SQRT2 * np.asarray(s, dtype=float)))
    panels = max(1, n_nodes // 8)
    xg, wg = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(-r, r, panels + 1)
    mid, half = 0.5 * (edges[:-1] + edges[1:]), 0.5 * np.diff(edges)
    S = (mid[:, None] + half[:, None] * xg).ravel()
    Wt = (half[:, None] * wg).ravel()
    Ws = well(q(S))

    def L(xi):
        xi = np.asarray(xi, dtype=float)
        return np.tensordot(L_theta(np.multiply.outer(xi, Ws)), Wt, axes=([-1], [0]))

    return L


def legendre_at(L: Callable, eta: float, xi_max: float = 200.0) -> tuple[float, float]:
    """sup_xi (eta xi - L(xi)) and its maximizer by bounded scalar search."""
    if eta == 0.0:
        return 0.0, 0.0
    lo, hi = (-xi_max, 0.0) if eta < 0 else (0.0, xi_max)
    res = minimize_scalar(lambda x: -(eta * x - float(L(x))), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12, "maxiter": 500})
    if not res.success or abs(res.x) > 0.999 * xi_max:
        raise LDError(f"Legendre maximization did not converge at eta={eta}")
    return float(-res.fun), float(res.x)


def ld_rate_machinery(theta_law, q_star: Callable | None = None, r: float = 5.0, xi_grid=None,
                      lambdas: Sequence[float] = (), well=None) -> LDQuantities:
    """Log-MGF, scaled cumulant and Legendre rates for the window energy.

    ``theta_law`` is a CellLaw or a (values, probs) pair. The Hoeffding bound
    L_Theta(xi) <= ((theta^* - theta_*)/2)^2 xi^2 / 2 and convexity (second
    differences >= -1e-10) are checked on ``xi_grid``.

    Raises
    ------
    ValueError
        If the grid is not symmetric, the law is unbounded, or the Hoeffding
        bound fails.
    LDError
        If a Legendre maximization does not converge.
    """
    if isinstance(theta_law, CellLaw):
        values, probs = theta_law.theta_marginal()
    else:
        values, probs = (np.asarray(v, dtype=float) for v in theta_law)
    if not np.all(np.isfinite(values)):
        raise ValueError("theta law must be bounded")
    xi_grid = np.linspace(-10.0, 10.0, 101) if xi_grid is None else np.asarray(xi_grid, dtype=float)
    if not np.allclose(xi_grid, -xi_grid[::-1], rtol=0, atol=1e-12):
        raise ValueError("xi_grid must be symmetric around 0")
    Lt = log_mgf_theta(values, probs)
    L = scaled_cumulant(Lt, r, q_star, well)
    lt = Lt(xi_grid)
    span = float(values.max() - values.min())
    hoeff = bool(np.all(lt <= (span / 2.0) ** 2 * xi_grid**2 / 2.0 + 1e-15))
    if not hoeff:
        raise ValueError("Hoeffding bound violated")
    lv = L(xi_grid)
    convex = bool(np.all(np.diff(lt, 2) >= -1e-10) and np.all(np.diff(lv, 2) >= -1e-10))
    rates, maxs = {}, {}
    for lam in lambdas:
        rates[float(lam)], maxs[float(lam)] = legendre_at(L, -float(lam))
    name = "tanh(sqrt2 s)" if q_star is None else getattr(q_star, "__name__", "custom")
    return LDQuantities(float(r), None, name, xi_grid, lt, lv, rates, maxs, hoeff, convex, Lt, L)


def finite_gamma_cumulant(law: CellLaw, gamma: float, r: float, q_star=None, well=None) -> Callable:
    """xi -> gamma log E exp(xi gamma^-1 (Z_gamma - E Z_gamma)) = gamma sum_z L_Theta(xi w_z / gamma)."""
    values, probs = law.theta_marginal()
    Lt = log_mgf_theta(values, probs)
    _, w, _ = window_cell_weights(gamma, r, q_star, well)

    def Lg(xi):
        xi = np.asarray(xi, dtype=float)
        return gamma * np.sum(Lt(np.multiply.outer(xi, w / gamma)), axis=-1)

    return Lg


@dataclass
class TiltedEstimate:
    p_hat: float
    stderr: float
    hits: int
    xi: float


def tilted_window_probability(law: CellLaw, gamma: float, r: float, lambda_dev: float, n_samples: int,
                              seed0: int, q_star=None, well=None) -> TiltedEstimate:
    """Importance-sampling estimate of P{Z_gamma <= E Z_gamma - lambda}.

    Each cell value is drawn from the exponentially tilted law
    p(theta) exp(t_z theta) / E exp(t_z Theta), t_z = xi w_z / gamma, with xi
    the saddle point of the finite-gamma cumulant, so the tilted mean of Z
    sits at E Z - lambda. The estimator averages the indicator times the
    likelihood ratio and is unbiased.
    """
    values, probs = law.theta_marginal()
    z, w, grad = window_cell_weights(gamma, r, q_star, well)
    theta_bar = float(values @ probs)
    mean = grad + theta_bar * w.sum()
    if lambda_dev <= 0:
        xi = 0.0
    else:
        _, xi = legendre_at(finite_gamma_cumulant(law, gamma, r, q_star, well), -lambda_dev)
    t = xi * w / gamma
    logits = np.log(probs)[None, :] + np.multiply.outer(t, values)
    log_norm = logsumexp(logits, axis=1)
    cum = np.cumsum(np.exp(logits - log_norm[:, None]), axis=1)
    cum[:, -1] = 1.0
    # centered log-mgf per cell, for the likelihood ratio
    k_cent = log_norm - t * theta_bar
    thr = mean - lambda_dev
    weights = np.empty(n_samples)
    hit = np.empty(n_samples, dtype=bool)
    for i in range(n_samples):
        u = uniforms(derive_seed(seed0, "Z-tilt", repr(gamma), repr(r), repr(lambda_dev), i), int(z[0]), z.size)[:, 0]
        idx = np.minimum((u[:, None] >= cum).sum(axis=1), values.size - 1)
        th = values[idx]
        Zi = grad + th @ w
        hit[i] = Zi <= thr
        weights[i] = math.exp(-float(t @ (th - theta_bar)) + float(k_cent.sum()))
    contrib = np.where(hit, weights, 0.0)
    p = float(contrib.mean())
    se = float(contrib.std(ddof=1) / math.sqrt(n_samples))
    return TiltedEstimate(p, se, int(hit.sum()), float(xi))


@dataclass
class LDRow:
    gamma: float
    lambda_dev: float
    n: int
    method: str
    p_hat: float
    stderr: float
    hits: int
    p_naive: float
    hits_naive: int
    rate_hat: float
    rate_oracle: float
    rel_err: float
    xi_tilt: float
    mean_Z: float
    range_lo: float
    range_hi: float


LD_COLUMNS = list(LDRow.__dataclass_fields__)


def calibrate_lambda_dev(law: CellLaw, r: float, gamma: float, n_samples: int, seed0: int,
                         p_target: float = 2e-4, q_star=None, well=None,
                         p_range: tuple = (1e-4, 0.3)) -> float:
    """Deviation lambda whose plain Monte-Carlo probability at ``gamma`` is near ``p_target``.

    The calibration pass uses its own seed stream, distinct from the
    measurement pass.

    Raises
    ------
    ValueError
        If the calibrated probability falls outside ``p_range``.
    """
    Z, mean = sample_window_energies(law, gamma, r, n_samples, derive_seed(seed0, "calibrate"), q_star, well)
    dev = np.sort(mean - Z)[::-1]
    k = max(1, int(round(p_target * n_samples)))
    lam = float(dev[k - 1])
    p = float(np.mean(Z <= mean - lam))
    if not p_range[0] <= p <= p_range[1]:
        raise ValueError(f"calibration failed: P = {p} at lambda = {lam}")
    return lam


def ld_rate_compare(law: CellLaw, r: float, gamma_list: Sequence[float], lambda_dev: float, n_samples: int,
                    seed0: int = 0, q_star=None, well=None, ld: LDQuantities | None = None,
                    method: str = "tilted") -> list[LDRow]:
    """gamma log P_hat{Z_gamma <= E Z_gamma - lambda} against -L*(-lambda) per gamma.

    ``method="tilted"`` estimates P by exponential tilting; ``"naive"`` by
    plain Monte Carlo. The plain estimate is always reported alongside.
    """
    if method not in ("tilted", "naive"):
        raise ValueError("method must be 'tilted' or 'naive'")
    if ld is None:
        ld = ld_rate_machinery(law, q_star, r, lambdas=[lambda_dev] if lambda_dev > 0 else [], well=well)
    oracle = ld.rate(lambda_dev) if lambda_dev > 0 else 0.0
    rows = []
    values, _ = law.theta_marginal()
    for g in gamma_list:
        Z, mean = sample_window_energies(law, g, r, n_samples, seed0, q_star, well)
        _, w, grad = window_cell_weights(g, r, q_star, well)
        hits_n = int(np.sum(Z <= mean - lambda_dev))
        p_naive = hits_n / n_samples
        if method == "tilted":
            te = tilted_window_probability(law, g, r, lambda_dev, n_samples, seed0, q_star, well)
            p, se, hits, xi = te.p_hat, te.stderr, te.hits, te.xi
        else:
            p, hits, xi = p_naive, hits_n, 0.0
            se = math.sqrt(p * (1 - p) / n_samples)
        rate = g * math.log(p) if p > 0 else -math.inf
        rel = abs(rate + oracle) / oracle if oracle > 0 and p > 0 else math.nan
        rows.append(LDRow(float(g), float(lambda_dev), n_samples, method, p, se, hits, p_naive, hits_n, rate,
                          -oracle, rel, xi, mean, float(grad + values.min() * w.sum()),
                          float(grad + values.max() * w.sum())))
    return rows


# ---------------------------------------------------------------------------
# Osc / Sub tails
# ---------------------------------------------------------------------------


def _tail_chunk(args):
    quantity, r, lo, hi, law_dict, seed0, R_max = args
    law = CellLaw.from_dict(law_dict)
    from .homog import osc_values, radius_grid, sub_values

    x = 0.0
    R_max = 4.0 * r if R_max is None else R_max
    zlo = math.floor(x - R_max / 2.0) - 1
    zhi = math.ceil(x + R_max / 2.0) + 1
    grid = radius_grid(r, R_max)
    A = np.empty((hi - lo, zhi - zlo + 1))
    T = np.empty_like(A)
    ref = None
    for k, i in enumerate(range(lo, hi)):
        m = sample_checkerboard(derive_seed(seed0, "tail", quantity, i), (zlo, zhi), law)
        A[k], T[k] = m.a_cells, m.theta_cells
        ref = m
    if quantity == "sub":
        vals = sub_values(A, ref, x, grid, law.a_bar())
    else:
        vals = osc_values(T, ref, x, grid, law.theta_bar())
    return vals.max(axis=1)


def sample_quantity_parallel(quantity: str, r: float, n_samples: int, law: CellLaw, seed0: int,
                             R_max: float | None = None, jobs: int = 1, chunk: int = 500) -> np.ndarray:
    """Values of ``sample_quantity`` computed in fixed index chunks.

    The chunking does not depend on ``jobs``, so batched floating-point
    reductions see identical shapes and outputs agree bit for bit across
    worker counts.
    """
    quantity = quantity.lower()
    if quantity not in ("sub", "osc"):
        raise ValueError("quantity must be 'sub' or 'osc'")
    tasks = [(quantity, r, lo, min(lo + chunk, n_samples), law.to_dict(), seed0, R_max)
             for lo in range(0, n_samples, chunk)]
    return np.concatenate(parallel_map(_tail_chunk, tasks, jobs))


@dataclass
class TailExperiment:
    quantity: str
    r_list: list
    nu: float
    nu_auto: bool
    estimates: list
    fit: LineFit | None
    verdict: str


def tails_experiment(quantity: str, r_list: Sequence[float], n_samples: int, law: CellLaw, seed0: int = 0,
                     nu: float | str = "auto", R_max_factor: float = 4.0, jobs: int = 1,
                     p_range: tuple = (1e-3, 0.5)) -> TailExperiment:
    """Tail probabilities at every r and a line fit of -log P_hat against r.

    With ``nu="auto"`` the threshold is calibrated on the same samples so
    that every P_hat lies in ``p_range``; the calibrated value is reported.
    """
    vals = {float(r): sample_quantity_parallel(quantity, r, n_samples, law, seed0, R_max_factor * r, jobs)
            for r in r_list}
    auto = isinstance(nu, str)
    if auto:
        if nu != "auto":
            raise ValueError("nu must be a number or 'auto'")
        nu = calibrate_nu(vals, *p_range)
    est = [tail_probability(quantity, r, float(nu), n_samples, law, seed0, values=v) for r, v in vals.items()]
    fit = None
    verdict = "insufficient hits"
    if all(e.hits > 0 for e in est) and len(est) >= 2:
        fit = fit_line([e.r for e in est], [-math.log(e.p_hat) for e in est])
        verdict = "exponential decay" if fit.slope > 0 and fit.r2 >= 0.9 else "no exponential fit"
    return TailExperiment(quantity, [float(r) for r in r_list], float(nu), auto, est, fit, verdict)


# ---------------------------------------------------------------------------
# Liouville excursions
# ---------------------------------------------------------------------------


class EpsRule:
    """Scale rule eps -> eps / delta(eps) for the quasi-periodic example.

    The default ``liouville`` rule sets eps / delta = T_2 / (2 log2(1/eps)),
    so a window of M eps in macro units spans M T_2 / (2 log2(1/eps))
    micro units and fits an excursion of length T_2 / 2 once eps <= 2^-M.
    """

    def __init__(self, kind: str = "liouville", T: float | None = None, beta: float = 2.0):
        if kind not in ("liouville", "power"):
            raise ValueError(f"unknown eps rule {kind!r}")
        self.kind, self.T, self.beta = kind, T, beta

    def ratio(self, eps: float) -> float:
        """eps / delta(eps)."""
        if self.kind == "power":
            return eps ** (1.0 - self.beta)
        return self.T / (2.0 * math.log2(1.0 / eps))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, "beta": self.beta}


@dataclass
class ExcursionRow:
    M: float
    found: bool
    s_micro: float
    length_micro: float
    threshold: float
    probes_exact: list
    probes_mp: list
    N: int


def eps_threshold(rule: EpsRule, M: float, length: float, j_max: int = 1000) -> float:
    """Largest dyadic eps = 2^-j such that M eps / delta fits ``length`` for all smaller dyadic eps."""
    fits = [M * rule.ratio(2.0**-j) <= length for j in range(1, j_max + 1)]
    if not fits[-1]:
        return 0.0
    j0 = j_max
    while j0 > 1 and fits[j0 - 2]:
        j0 -= 1
    return 2.0**-j0


def liouville_excursion_experiment(stripe: LiouvilleStripe | None, M_list: Sequence[float],
                                   eps_rule: EpsRule | None = None, base_point=(0.3, 0.7), N: int = 2,
                                   budget: float | None = None) -> list[ExcursionRow]:
    """Locate f = 1 windows of length M eps for every M and report eps thresholds.

    For each M the certified excursion [s, s + T_N/2] of the line through
    ``base_point`` hosts [s, s + M eps / delta] whenever eps is at most the
    reported threshold. A missing stripe stands for theta^stripe = 1, where
    any s works and the threshold is infinite.
    """
    if stripe is None:
        return [ExcursionRow(float(M), True, 0.0, math.inf, math.inf, [], [], 0) for M in M_list]
    if stripe.N_max < 2:
        raise ValueError("stripe must store at least two convergents")
    ex = locate_excursion(stripe, base_point, N, budget)
    rule = eps_rule or EpsRule("liouville", T=ex.T_N)
    if rule.kind == "liouville" and rule.T is None:
        rule.T = ex.T_N
    length = ex.interval[1] - ex.interval[0]
    rows = []
    for M in M_list:
        thr = eps_threshold(rule, float(M), length)
        ok = all(ex.probes) and all(ex.probes_mp)
        rows.append(ExcursionRow(float(M), ok, ex.s, length, thr, list(ex.probes), list(ex.probes_mp), N))
    return rows


@dataclass
class LiouvilleChecks:
    """Exact-arithmetic checks of the Liouville stripe construction."""

    inequality: list
    L_ok: bool
    R_ok: bool
    measure_sum: Fraction
    measure_bound_sum: float
    measure_ok: bool
    mc_points: int
    mc_fraction: float
    mc_ok: bool
    excursion: ExcursionRow
    excursion_ok: bool
    T: list
    growth: list

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measure_sum"] = str(self.measure_sum)
        return d


def liouville_checks(stripe: LiouvilleStripe, mc_points: int = 1_000_000, seed: int = 0,
                     base_point=(0.3, 0.7), N: int = 2, growth_M: float = 3.0,
                     extra_pairs: Sequence = ((5, 6),)) -> LiouvilleChecks:
    """Verify the stored convergents, cycle lengths, spacings, measures and an excursion.

    The approximation inequality 0 < lambda - p/q < q^-N is checked on a
    rational bracket of lambda. L(p/q) = q and R(p/q) = 1/sqrt(p^2 + q^2)
    are checked for every convergent and each pair in ``extra_pairs``. The
    measure sum uses |E_N| = 3^-N exactly and must not exceed 1/2.
    """
    from .media import cycle_length, excursion_growth, excursion_time, liouville_bracket, strip_spacing, \
        torus_membership_mc

    ineq = []
    for n in range(1, stripe.N_max + 1):
        p, q = stripe.pq(n)
        lo, hi = liouville_bracket(n + 2)
        ineq.append(bool(math.gcd(p, q) == 1 and lo - Fraction(p, q) > 0 and hi - Fraction(p, q) < Fraction(1, q**n)))
    pairs = list(extra_pairs) + [stripe.pq(n) for n in range(1, stripe.N_max + 1)]
    L_ok = all(cycle_length(p, q) == q for p, q in pairs if math.gcd(p, q) == 1)
    R_ok = all(strip_spacing(p, q)[0] / math.sqrt(p * p + q * q) == 1.0 / math.sqrt(p * p + q * q)
               for p, q in pairs if math.gcd(p, q) == 1)
    msum = sum((stripe.strip_measure(n) for n in range(1, stripe.N_max + 1)), Fraction(0))
    bsum = float(sum(stripe.strip_measure_bound(n) for n in range(1, stripe.N_max + 1)))
    mc = torus_membership_mc(stripe, mc_points, seed)
    ex = liouville_excursion_experiment(stripe, [2.0], base_point=base_point, N=N)[0]
    T = [float(excursion_time(stripe, n)) for n in range(1, stripe.N_max + 1)]
    ex_ok = ex.found and ex.length_micro >= T[N - 1] / 2.0 * (1 - 1e-12) and len(ex.probes_exact) == 3
    growth = excursion_growth(stripe, growth_M) if stripe.N_max >= 3 else []
    return LiouvilleChecks(ineq, L_ok, R_ok, msum, bsum, msum <= Fraction(1, 2) and bsum <= 0.5, mc_points, mc,
                           mc <= 0.52, ex, ex_ok, T, growth)


# ---------------------------------------------------------------------------
# Lamp medium vs i.i.d. control
# ---------------------------------------------------------------------------


@dataclass
class LampExperiment:
    alpha: float
    lengths: list
    p_lit: float
    lamp: RunLengthTable
    iid: RunLengthTable
    loglog_fit: LineFit
    semilog_fit_iid: LineFit
    loglog_fit_iid: LineFit
    semilog_fit_lamp: LineFit
    lower_bound_ok: bool
    slope_target: float


def _lamp_field(args):
    seed0, alpha, n_sites, i = args
    st = sample_lamp_stripe(derive_seed(seed0, "lamp", repr(alpha), i), alpha, (0, n_sites - 1))
    return st.markers


def _iid_field(args):
    seed0, p, n_sites, i = args
    u = uniforms(derive_seed(seed0, "lamp-iid", repr(p), i), 0, n_sites)[:, 0]
    return np.where(u < p, 1, 2).astype(np.int8)


def lamp_experiment(alpha: float = 1.0, lengths: Sequence[int] = (4, 6, 8, 12, 16, 24, 32), n_fields: int = 64,
                    n_sites: int = 100_000, seed0: int = 0, jobs: int = 1) -> LampExperiment:
    """Run-length tails of lit stretches for the lamp medium and a matched i.i.d. field.

    The i.i.d. control lights each site independently with the lamp
    medium's empirical P{Theta = 1}. The lamp tail is fitted on log-log axes
    and the control on semilog axes; ``slope_target`` is -(1 + alpha).
    """
    lit = lambda v: np.asarray(v) == 1  # noqa: E731
    lamp_fields = parallel_map(_lamp_field, [(seed0, alpha, n_sites, i) for i in range(n_fields)], jobs)
    p_lit = float(np.mean([np.mean(f == 1) for f in lamp_fields]))
    iid_fields = parallel_map(_iid_field, [(seed0, p_lit, n_sites, i) for i in range(n_fields)], jobs)
    lamp = run_length_tail(lamp_fields, lit, lengths)
    iid = run_length_tail(iid_fields, lit, lengths)
    N = np.asarray(lengths, dtype=float)

    def safe_log(p):
        if np.any(p <= 0):
            raise ValueError("zero run frequency; increase n_fields or n_sites")
        return np.log(p)

    ll = fit_line(np.log(N), safe_log(lamp.p_hat))
    sl_lamp = fit_line(N, safe_log(lamp.p_hat))
    iid_pos = iid.p_hat > 0
    sl = fit_line(N[iid_pos], np.log(iid.p_hat[iid_pos]))
    ll_iid = fit_line(np.log(N[iid_pos]), np.log(iid.p_hat[iid_pos]))
    # a lamp at the center with X_0 >= N lights the whole run: P >= P{X >= N} ~ N^-(1+alpha)
    lower_ok = bool(np.all(lamp.p_hat + 3.0 * lamp.stderr >= lamp_lower_bound(alpha, lengths)))
    return LampExperiment(float(alpha), list(lengths), p_lit, lamp, iid, ll, sl, ll_iid, sl_lamp, lower_ok,
                          -(1.0 + alpha))


def lamp_lower_bound(alpha: float, N) -> np.ndarray:
    """P{X_0 >= N}: a lamp at the center lighting [-N, N], a lower bound on the run probability."""
    from .media import lamp_range_tail

    return lamp_range_tail(alpha, np.asarray(N))
