"""Coefficient fields (a, theta): checkerboards, lamp stripes, Liouville stripes.

Conventions
-----------
A one-dimensional cell medium stores one value pair per integer cell ``z``;
cell ``z`` occupies ``[offset + z w, offset + (z + 1) w)`` with cell width
``w``. Checkerboards use ``w = 1`` and ``offset = -1/2``, so cell ``z`` is
``[z - 1/2, z + 1/2)``. Lamp stripes use ``offset = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import mpmath
import numpy as np
from scipy.special import zeta

from .rng import uniforms, uniforms_at

# ---------------------------------------------------------------------------
# laws and one-dimensional cell media
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bounds:
    """Ellipticity and potential bounds (lambda, Lambda, theta_lo, theta_hi)."""

    lam: float
    Lam: float
    th_lo: float
    th_hi: float

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam and 0 < self.th_lo <= self.th_hi):
            raise ValueError(f"invalid bounds {self}")

    def as_tuple(self):
        return (self.lam, self.Lam, self.th_lo, self.th_hi)


@dataclass(frozen=True)
class CellLaw:
    """Discrete law of the cell pair (A_z, Theta_z).

    Parameters
    ----------
    values : tuple of (a, theta)
        Support points.
    probs : tuple of float
        Probabilities, summing to one.
    """

    values: tuple
    probs: tuple

    def __post_init__(self):
        vals = tuple((float(a), float(t)) for a, t in self.values)
        probs = tuple(float(p) for p in self.probs)
        if not vals:
            raise ValueError("empty support")
        if len(vals) != len(probs):
            raise ValueError("values and probs differ in length")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        if any(a <= 0 or t <= 0 for a, t in vals):
            raise ValueError("coefficients must be positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point(cls, a: float, theta: float) -> "CellLaw":
        return cls(((a, theta),), (1.0,))

    @classmethod
    def product(cls, a_values, theta_values, a_probs=None, theta_probs=None) -> "CellLaw":
        """Independent a and theta; equal weights unless given."""
        a_values, theta_values = list(a_values), list(theta_values)
        pa = list(a_probs) if a_probs is not None else [1.0 / len(a_values)] * len(a_values)
        pt = list(theta_probs) if theta_probs is not None else [1.0 / len(theta_values)] * len(theta_values)
        vals, probs = [], []
        for a, p in zip(a_values, pa):
            for t, q in zip(theta_values, pt):
                vals.append((a, t))
                probs.append(p * q)
        return cls(tuple(vals), tuple(probs))

    @classmethod
    def four_point(cls, lam=1.0, Lam=4.0, th_lo=1.0, th_hi=2.0) -> "CellLaw":
        """Each of the four corner pairs with probability 1/4."""
        return cls.product([lam, Lam], [th_lo, th_hi])

    def bounds(self) -> Bounds:
        a = [v[0] for v, p in zip(self.values, self.probs) if p > 0]
        t = [v[1] for v, p in zip(self.values, self.probs) if p > 0]
        return Bounds(min(a), max(a), min(t), max(t))

    def a_bar(self) -> float:
        """Harmonic mean of a."""
        return 1.0 / sum(p / v[0] for v, p in zip(self.values, self.probs))

    def theta_bar(self) -> float:
        return sum(p * v[1] for v, p in zip(self.values, self.probs))

    def prob_of(self, pair) -> float:
        a, t = pair
        return sum(p for v, p in zip(self.values, self.probs) if v[0] == a and v[1] == t)

    def theta_marginal(self):
        """Support and probabilities of theta alone."""
        out: dict[float, float] = {}
        for (a, t), p in zip(self.values, self.probs):
            out[t] = out.get(t, 0.0) + p
        keys = sorted(out)
        return np.array(keys), np.array([out[k] for k in keys])

    def is_constant(self) -> bool:
        return len({v for v, p in zip(self.values, self.probs) if p > 0}) == 1

    def to_dict(self):
        return {"values": [list(v) for v in self.values], "probs": list(self.probs)}

    @classmethod
    def from_dict(cls, d) -> "CellLaw":
        return cls(tuple(tuple(v) for v in d["values"]), tuple(d["probs"]))


@dataclass(frozen=True, eq=False)
class Medium1D:
    """Piecewise-constant medium with one (A_z, Theta_z) pair per cell.

    Attributes
    ----------
    z_min : int
        Index of the first stored cell.
    a_cells, theta_cells : ndarray
        Cell values for z = z_min, ..., z_max.
    bounds : Bounds
    seed : int or None
        Sampling seed; None for deterministic or edited media.
    kind : str
        Type tag used in serialization.
    cell_width, offset : float
        Cell z occupies [offset + z w, offset + (z + 1) w).
    law : CellLaw or None
        Law the cells were drawn from, if any.
    """

    z_min: int
    a_cells: np.ndarray
    theta_cells: np.ndarray
    bounds: Bounds
    seed: int | None = None
    kind: str = "checkerboard"
    cell_width: float = 1.0
    offset: float = -0.5
    law: CellLaw | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.a_cells, dtype=float)
        t = np.asarray(self.theta_cells, dtype=float)
        if a.shape != t.shape or a.ndim != 1 or a.size == 0:
            raise ValueError("cell arrays must be nonempty, 1D and equal length")
        b = self.bounds
        if a.min() < b.lam or a.max() > b.Lam or t.min() < b.th_lo or t.max() > b.th_hi:
            raise ValueError("cell values violate the declared bounds")
        a.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "a_cells", a)
        object.__setattr__(self, "theta_cells", t)

    @property
    def n_cells(self) -> int:
        return int(self.a_cells.size)

    @property
    def z_max(self) -> int:
        return self.z_min + self.n_cells - 1

    @property
    def lo(self) -> float:
        return self.offset + self.z_min * self.cell_width

    @property
    def hi(self) -> float:
        return self.offset + (self.z_max + 1) * self.cell_width

    def cell_index(self, x):
        return np.floor((np.asarray(x, dtype=float) - self.offset) / self.cell_width).astype(np.int64)

    def _lookup(self, x, arr):
        z = self.cell_index(x)
        if np.any(z < self.z_min) or np.any(z > self.z_max):
            raise IndexError("point outside the sampled window")
        return arr[z - self.z_min]

    def a(self, x):
        return self._lookup(x, self.a_cells)

    def theta(self, x):
        return self._lookup(x, self.theta_cells)

    def edges(self) -> np.ndarray:
        return self.offset + self.cell_width * np.arange(self.z_min, self.z_max + 2)

    def covers(self, lo: float, hi: float) -> bool:
        return self.lo <= lo and hi <= self.hi

    def pieces(self, lo: float, hi: float):
        """Breakpoints and per-piece values of (a, theta) on [lo, hi].

        Returns
        -------
        breaks : ndarray, shape (k + 1,)
        a, theta : ndarray, shape (k,)
        """
        if not self.covers(lo, hi):
            raise IndexError(f"window [{self.lo}, {self.hi}] does not cover [{lo}, {hi}]")
        e = self.edges()
        inner = e[(e > lo) & (e < hi)]
        breaks = np.concatenate([[lo], inner, [hi]])
        mids = 0.5 * (breaks[:-1] + breaks[1:])
        z = self.cell_index(mids) - self.z_min
        return breaks, self.a_cells[z], self.theta_cells[z]

    def planted(self, z_lo: int, z_hi: int, a: float, theta: float) -> "Medium1D":
        """Copy with cells z_lo..z_hi (inclusive) set to (a, theta)."""
        A = self.a_cells.copy()
        T = self.theta_cells.copy()
        i, j = z_lo - self.z_min, z_hi - self.z_min + 1
        if i < 0 or j > self.n_cells or i >= j:
            raise IndexError("planted range outside window")
        A[i:j] = a
        T[i:j] = theta
        meta = dict(self.meta)
        meta.setdefault("planted", []).append([int(z_lo), int(z_hi), float(a), float(theta)])
        return replace(self, a_cells=A, theta_cells=T, meta=meta)

    def shifted(self, k: int) -> "Medium1D":
        """The same cell values relabelled so that cell z becomes z + k."""
        return replace(self, z_min=self.z_min + int(k))

    def to_dict(self) -> dict:
        d = {
            "type": self.kind,
            "bounds": list(self.bounds.as_tuple()),
            "seed": None if self.seed is None else int(self.seed),
            "window": [int(self.z_min), int(self.z_max)],
            "cell_width": self.cell_width,
            "offset": self.offset,
            "law": None if self.law is None else self.law.to_dict(),
            "meta": self.meta,
        }
        if self.seed is None or self.law is None or self.meta.get("planted"):
            d["cells"] = {"a": self.a_cells.tolist(), "theta": self.theta_cells.tolist()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "Medium1D":
        bounds = Bounds(*d["bounds"])
        law = CellLaw.from_dict(d["law"]) if d.get("law") else None
        z0, z1 = d["window"]
        if "cells" in d:
            a, t = d["cells"]["a"], d["cells"]["theta"]
            return cls(z0, np.array(a), np.array(t), bounds, d.get("seed"), d["type"],
                       d["cell_width"], d["offset"], law, dict(d.get("meta", {})))
        if law is None or d.get("seed") is None:
            raise ValueError("need either explicit cells or (law, seed)")
        m = sample_checkerboard(d["seed"], (z0, z1), law, bounds=bounds)
        return replace(m, kind=d["type"], meta=dict(d.get("meta", {})))


def sample_checkerboard(seed: int, window, law: CellLaw, bounds: Bounds | None = None) -> Medium1D:
    """I.i.d. cells with values drawn from ``law``.

    Cell z is drawn from the counter-based stream at (seed, z), so the value
    of a cell does not depend on the window that contains it.

    Parameters
    ----------
    seed : int
    window : (int, int)
        Inclusive range of cell indices.
    law : CellLaw
    bounds : Bounds, optional
        Declared bounds; defaults to the law's support hull.
    """
    z0, z1 = int(window[0]), int(window[1])
    if z1 < z0:
        raise ValueError("empty window")
    lb = law.bounds()
    if bounds is None:
        bounds = lb
    elif lb.lam < bounds.lam or lb.Lam > bounds.Lam or lb.th_lo < bounds.th_lo or lb.th_hi > bounds.th_hi:
        raise ValueError("law support violates the declared bounds")
    u = uniforms(seed, z0, z1 - z0 + 1)[:, 0]
    cum = np.cumsum(law.probs)
    cum[-1] = 1.0
    idx = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
    vals = np.array(law.values)
    return Medium1D(z0, vals[idx, 0], vals[idx, 1], bounds, seed, "checkerboard", law=law)


def constant_medium(a: float, theta: float, window) -> Medium1D:
    n = int(window[1]) - int(window[0]) + 1
    return Medium1D(int(window[0]), np.full(n, float(a)), np.full(n, float(theta)),
                    Bounds(a, a, theta, theta), None, "constant", law=CellLaw.point(a, theta))


def periodic_medium(a_pattern, theta_pattern, cell_width: float, window) -> Medium1D:
    """Periodic medium repeating the given patterns, cell z on [z w, (z+1) w)."""
    a_pattern = np.asarray(a_pattern, dtype=float)
    theta_pattern = np.asarray(theta_pattern, dtype=float)
    if a_pattern.shape != theta_pattern.shape:
        raise ValueError("patterns differ in length")
    z = np.arange(int(window[0]), int(window[1]) + 1)
    k = np.mod(z, a_pattern.size)
    b = Bounds(a_pattern.min(), a_pattern.max(), theta_pattern.min(), theta_pattern.max())
    return Medium1D(int(window[0]), a_pattern[k], theta_pattern[k], b, None, "periodic",
                    cell_width=float(cell_width), offset=0.0,
                    meta={"period": float(cell_width * a_pattern.size)})


def find_minimal_stretch(medium: Medium1D, j: float, target) -> float:
    """Arrival radius of a favorable stretch of length ``j``.

    Returns the smallest R >= 0 such that some x in [-R, R] has
    (a, theta) equal to ``target`` on [x, x + j). Runs touching the window
    edge are cut at the edge. Returns ``inf`` if no stretch fits.
    """
    lam, th = target
    good = (medium.a_cells == lam) & (medium.theta_cells == th)
    if not good.any():
        return math.inf
    e = medium.edges()
    g = np.concatenate([[False], good, [False]]).astype(np.int8)
    d = np.diff(g)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    s, t = e[starts], e[ends]
    ok = (t - s) >= j - 1e-12
    if not ok.any():
        return math.inf
    lo, hi = s[ok], t[ok] - j
    dist = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
    return float(dist.min())


# ---------------------------------------------------------------------------
# lamp stripes
# ---------------------------------------------------------------------------


def lamp_pmf(alpha: float, k) -> np.ndarray:
    """mu_alpha(k) proportional to |k|^-(2+alpha) on the nonzero integers."""
    s = 2.0 + alpha
    k = np.asarray(k, dtype=float)
    out = np.where(k == 0, 0.0, np.abs(np.where(k == 0, 1.0, k)) ** -s / (2.0 * zeta(s)))
    return out


def lamp_range_tail(alpha: float, k) -> np.ndarray:
    """P{X >= k} for k >= 1."""
    s = 2.0 + alpha
    return zeta(s, np.asarray(k, dtype=float)) / (2.0 * zeta(s))


def lamp_ignored_illumination(alpha: float, K: int) -> float:
    """Probability that some lamp beyond distance K (either side) lights a site."""
    s = 2.0 + alpha
    one_side = (zeta(s - 1.0, K + 1.0) - K * zeta(s, K + 1.0)) / (2.0 * zeta(s))
    return float(2.0 * one_side)


def lamp_pad(alpha: float, tol: float = 1e-4, max_pad: int = 10**7) -> int:
    """Smallest influence cap K whose ignored illumination is below ``tol``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if lamp_ignored_illumination(alpha, max_pad) >= tol:
        raise ValueError("window too small for requested truncation accuracy")
    lo, hi = 0, max_pad
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if lamp_ignored_illumination(alpha, mid) < tol:
            hi = mid
        else:
            lo = mid
    return hi


def sample_lamp_ranges(seed: int, alpha: float, sites: np.ndarray, table_size: int) -> np.ndarray:
    """Draw X_m from mu_alpha by inverse CDF on a zeta table.

    Magnitudes beyond ``table_size`` use the continuous tail inversion
    k ~ (u zeta(s) (s-1))^(-1/(s-1)); any such lamp lights the whole window.
    """
    s = 2.0 + alpha
    u = uniforms_at(seed, sites, family=1)
    k = np.arange(1, table_size + 1, dtype=float)
    tail = zeta(s, k) / zeta(s)  # P(|X| >= k)
    mag = np.searchsorted(-tail, -u[:, 1], side="right").astype(np.int64)
    far = mag >= table_size
    if far.any():
        est = (u[far, 1] * zeta(s) * (s - 1.0)) ** (-1.0 / (s - 1.0))
        mag[far] = np.maximum(np.minimum(est, 2.0**62), table_size).astype(np.int64)
    mag = np.maximum(mag, 1)
    return np.where(u[:, 0] < 0.5, -mag, mag)


@dataclass(frozen=True, eq=False)
class LampStripe:
    """Lamp field on the sites ``k_min, ..., k_min + len(markers) - 1``.

    Attributes
    ----------
    alpha : float
    seed : int or None
    k_min : int
    markers : ndarray of int8
        Theta^stripe_k in {1, 2}; 1 means illuminated.
    lamp_sites, lamp_ranges : ndarray
        Sites m (window plus padding) and their ranges X_m.
    pad : int
        Influence cap: lamps farther than this from the window are ignored.
    """

    alpha: float
    seed: int | None
    k_min: int
    markers: np.ndarray
    lamp_sites: np.ndarray
    lamp_ranges: np.ndarray
    pad: int

    @property
    def k_max(self) -> int:
        return self.k_min + self.markers.size - 1

    def to_medium(self) -> Medium1D:
        n = self.markers.size
        return Medium1D(self.k_min, np.ones(n), self.markers.astype(float), Bounds(1, 1, 1, 2),
                        self.seed, "lamp", cell_width=1.0, offset=0.0,
                        meta={"alpha": self.alpha, "pad": self.pad})

    def to_dict(self) -> dict:
        return {"type": "lamp", "alpha": self.alpha, "seed": self.seed,
                "window": [self.k_min, self.k_max], "pad": self.pad,
                "bounds": [1.0, 1.0, 1.0, 2.0]}


def illuminate(k_lo: int, k_hi: int, sites: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Markers on [k_lo, k_hi]: 1 where some lamp with |m - k| <= X_m reaches."""
    n = k_hi - k_lo + 1
    on = ranges >= 0
    m, X = sites[on], ranges[on]
    lo = np.clip(m - X, k_lo, k_hi + 1) - k_lo
    hi = np.clip(m + X + 1, k_lo, k_hi + 1) - k_lo
    keep = hi > lo
    d = np.zeros(n + 1, dtype=np.int64)
    np.add.at(d, lo[keep], 1)
    np.add.at(d, hi[keep], -1)
    lit = np.cumsum(d[:-1]) > 0
    return np.where(lit, 1, 2).astype(np.int8)


def sample_lamp_stripe(
    seed: int,
    alpha: float,
    window,
    pad: int | None = None,
    tol: float = 1e-4,
    default_range: int | None = None,
    forced_ranges: Mapping[int, int] | None = None,
) -> LampStripe:
    """Sample lamp ranges and derive the stripe markers.

    Parameters
    ----------
    seed : int
    alpha : float
        Tail exponent; mu_alpha(k) is proportional to |k|^-(2+alpha).
    window : (int, int)
        Inclusive site range for the markers.
    pad : int, optional
        Influence cap; by default the smallest cap whose ignored illumination
        probability per site is below ``tol``.
    default_range, forced_ranges
        Test hooks. ``default_range`` overrides every X_m; ``forced_ranges``
        then overrides individual sites.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    k_lo, k_hi = int(window[0]), int(window[1])
    if k_hi < k_lo:
        raise ValueError("empty window")
    if pad is None:
        pad = lamp_pad(alpha, tol)
    sites = np.arange(k_lo - pad, k_hi + pad + 1, dtype=np.int64)
    if default_range is not None:
        ranges = np.full(sites.size, int(default_range), dtype=np.int64)
    else:
        ranges = sample_lamp_ranges(seed, alpha, sites, table_size=int(sites.size) + 1)
    if forced_ranges:
        for m, x in forced_ranges.items():
            i = int(m) - int(sites[0])
            if 0 <= i < sites.size:
                ranges[i] = int(x)
    markers = illuminate(k_lo, k_hi, sites, ranges)
    return LampStripe(float(alpha), seed, k_lo, markers, sites, ranges, int(pad))


@dataclass
class RunLengthTable:
    """Per-N run-length frequencies.

    ``p_hat[i]`` estimates P{predicate holds on the 2N+1 sites centered at a
    site}, averaged over all centers of every field; ``stderr`` is the
    standard error across independent fields.
    """

    N: np.ndarray
    p_hat: np.ndarray
    stderr: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_fields: int
    zero_events: list


def _field_values(f):
    if isinstance(f, LampStripe):
        return f.markers
    if isinstance(f, Medium1D):
        return np.stack([f.a_cells, f.theta_cells], axis=1)
    return np.asarray(f)


def run_length_tail(fields: Iterable, predicate: Callable, lengths: Sequence[int]) -> RunLengthTable:
    """Empirical probability of a run of length 2N+1 centered at a site.

    Parameters
    ----------
    fields : iterable
        Independent samples: LampStripe, Medium1D or raw arrays.
    predicate : callable
        Maps the field's value array to a boolean array per site. For a
        Medium1D the value array has columns (a, theta).
    lengths : sequence of int
        Half-lengths N.
    """
    lengths = [int(n) for n in lengths]
    freqs = []
    for f in fields:
        ok = np.asarray(predicate(_field_values(f)), dtype=bool)
        c = np.concatenate([[0], np.cumsum(ok)])
        row = []
        for N in lengths:
            L = 2 * N + 1
            if L > ok.size:
                raise ValueError("field shorter than the requested run")
            row.append(np.mean((c[L:] - c[:-L]) == L))
        freqs.append(row)
    F = np.array(freqs)
    if F.shape[0] < 2:
        raise ValueError("need at least two independent fields")
    p = F.mean(axis=0)
    se = F.std(axis=0, ddof=1) / np.sqrt(F.shape[0])
    zero = [N for N, v in zip(lengths, p) if v == 0]
    return RunLengthTable(np.array(lengths), p, se, np.maximum(p - 1.96 * se, 0.0),
                          np.minimum(p + 1.96 * se, 1.0), F.shape[0], zero)


# ---------------------------------------------------------------------------
# Liouville stripes
# ---------------------------------------------------------------------------

LIOUVILLE_N_MAX = 4
_LAMBDA_PREC = 1024  # bits


def liouville_convergent(N: int) -> tuple[int, int]:
    """(p_N, q_N) with q_N = 2^(N!) and p_N / q_N the N-th partial sum."""
    if N < 1:
        raise ValueError("N >= 1")
    f = math.factorial(N)
    q = 1 << f
    p = sum(1 << (f - math.factorial(k)) for k in range(1, N + 1))
    return p, q


def liouville_bracket(K: int) -> tuple[Fraction, Fraction]:
    """Rational bracket lo < lambda < hi from the first K terms.

    The tail sum over k > K is positive and at most 2^(1 - (K+1)!).
    """
    p, q = liouville_convergent(K)
    lo = Fraction(p, q)
    return lo, lo + Fraction(2, 1 << math.factorial(K + 1))


def liouville_lambda(prec: int = _LAMBDA_PREC):
    """High-precision value of lambda = sum 2^(-k!)."""
    with mpmath.workprec(prec):
        s = mpmath.mpf(0)
        k = 1
        while math.factorial(k) <= prec + 8:
            s += mpmath.ldexp(1, -math.factorial(k))
            k += 1
        return +s


def cycle_length(p: int, q: int, search_limit: int = 10**6) -> int:
    """L(p/q) = inf{T > 0 : (T, T p/q) in Z^2}, found by direct search when small."""
    if q <= 0:
        raise ValueError("q must be positive")
    if q <= search_limit:
        T = 1
        while (T * p) % q:
            T += 1
        return T
    return q // math.gcd(p, q)


def strip_spacing(p: int, q: int) -> tuple[int, tuple[int, int]]:
    """Smallest positive value of -p k1 + q k2 over integer k, with a witness.

    R(p/q) equals this value divided by sqrt(p^2 + q^2).
    """

    def egcd(a, b):
        if b == 0:
            return a, 1, 0
        g, x, y = egcd(b, a % b)
        return g, y, x - (a // b) * y

    g, x, y = egcd(p, q)  # x p + y q = g
    k = (-x, y)
    assert -p * k[0] + q * k[1] == g
    return g, k


@dataclass(frozen=True, eq=False)
class LiouvilleStripe:
    """Strips E_N on the torus built from Liouville convergents.

    A torus point x lies in E_N when frac(-p_N x1 + q_N x2) is in
    [m_N / 3^N, (m_N + 1) / 3^N]; the reduced strip uses [m_N, m_N + 1/2].
    This is x . e_N / R_N read modulo one.
    """

    N_max: int
    convergents: tuple
    strip_indices: tuple
    lam: object = field(repr=False)

    def pq(self, N: int) -> tuple[int, int]:
        return self.convergents[N - 1]

    def L(self, N: int) -> int:
        p, q = self.pq(N)
        return cycle_length(p, q)

    def R(self, N: int) -> float:
        p, q = self.pq(N)
        g, _ = strip_spacing(p, q)
        return float(g / math.sqrt(p * p + q * q))

    def strip_measure_bound(self, N: int) -> float:
        """L_N R_N / 3^N."""
        p, q = self.pq(N)
        return float(q / math.sqrt(p * p + q * q) / 3**N)

    def strip_measure(self, N: int) -> Fraction:
        """Lebesgue measure of E_N: the phase is uniform mod 1, so exactly 3^-N."""
        return Fraction(1, 3**N)

    def eta(self, prec: int = _LAMBDA_PREC):
        with mpmath.workprec(prec):
            n = mpmath.sqrt(1 + self.lam**2)
            return (1 / n, self.lam / n)

    def phase_exact(self, N: int, x1: Fraction, x2: Fraction) -> Fraction:
        p, q = self.pq(N)
        v = -p * Fraction(x1) + q * Fraction(x2)
        return v - math.floor(v)

    def in_strip_exact(self, N: int, x1, x2, reduced: bool = False) -> bool:
        m = self.strip_indices[N - 1]
        ph = self.phase_exact(N, Fraction(x1), Fraction(x2))
        width = Fraction(1, 2) if reduced else Fraction(1)
        return Fraction(m, 3**N) <= ph <= (m + width) / 3**N

    def in_E_float(self, x1, x2, N_list=None) -> np.ndarray:
        """Vectorized membership in the union of E_N, in double precision."""
        x1 = np.mod(np.asarray(x1, dtype=float), 1.0)
        x2 = np.mod(np.asarray(x2, dtype=float), 1.0)
        out = np.zeros(np.broadcast(x1, x2).shape, dtype=bool)
        for N in N_list or range(1, self.N_max + 1):
            p, q = self.pq(N)
            m = self.strip_indices[N - 1]
            ph = np.mod(-float(p) * x1 + float(q) * x2, 1.0) * 3**N
            out |= (ph >= m) & (ph <= m + 1)
        return out

    def f_values(self, base_point, s) -> np.ndarray:
        """f_x(s) = 2 - indicator of E at x + s eta, double precision."""
        e1, e2 = (float(c) for c in self.eta(64))
        s = np.asarray(s, dtype=float)
        x1 = base_point[0] + s * e1
        x2 = base_point[1] + s * e2
        return np.where(self.in_E_float(x1, x2), 1, 2)

    def to_dict(self) -> dict:
        return {
            "type": "liouville",
            "N_max": self.N_max,
            "convergents": [[str(p), str(q)] for p, q in self.convergents],
            "strip_indices": list(self.strip_indices),
            "lambda": mpmath.nstr(self.lam, 60),
            "bounds": [1.0, 1.0, 1.0, 2.0],
        }


def build_liouville_stripe(N_max: int, strip_indices: Sequence[int] | None = None) -> LiouvilleStripe:
    """Construct and validate the Liouville strips up to ``N_max``.

    Raises
    ------
    ValueError
        If N_max exceeds the exact-arithmetic budget or an index is out of range.
    ArithmeticError
        If a stored convergent violates gcd = 1 or the approximation inequality.
    """
    if not 1 <= N_max <= LIOUVILLE_N_MAX:
        raise ValueError(f"N_max must be in [1, {LIOUVILLE_N_MAX}]")
    idx = list(strip_indices) if strip_indices is not None else [0] * N_max
    if len(idx) < N_max:
        raise ValueError("one strip index per N required")
    for N, m in enumerate(idx[:N_max], start=1):
        if not 0 <= m < 3**N:
            raise ValueError(f"strip index m_{N} out of range")
    convs = []
    for N in range(1, N_max + 1):
        p, q = liouville_convergent(N)
        if math.gcd(p, q) != 1:
            raise ArithmeticError(f"gcd(p_{N}, q_{N}) != 1")
        lo, hi = liouville_bracket(N + 2)
        d_lo, d_hi = lo - Fraction(p, q), hi - Fraction(p, q)
        if not (d_lo > 0 and d_hi < Fraction(1, q**N)):
            raise ArithmeticError(f"approximation inequality fails at N={N}")
        convs.append((p, q))
    return LiouvilleStripe(N_max, tuple(convs), tuple(idx[:N_max]), liouville_lambda())


def excursion_time(stripe: LiouvilleStripe, N: int, prec: int = _LAMBDA_PREC):
    """T_N = sqrt(1 + lambda^2) 3^-N q_N^-1 (lambda - lambda_N)^-1 as an mpf."""
    if not 1 <= N <= stripe.N_max:
        raise ValueError("N outside stored range")
    p, q = stripe.pq(N)
    with mpmath.workprec(prec):
        lam = stripe.lam
        gap = lam - mpmath.mpf(p) / q
        if gap == 0:
            raise ArithmeticError("lambda equals lambda_N")
        return mpmath.sqrt(1 + lam**2) / (mpmath.mpf(3) ** N * q * gap)


def excursion_growth(stripe: LiouvilleStripe, M: float, N_from: int = 2) -> list[bool]:
    """Whether T_N M^-N increases from N-1 to N, for N = N_from+1, ..., N_max."""
    vals = [excursion_time(stripe, N) / mpmath.mpf(M) ** N for N in range(1, stripe.N_max + 1)]
    return [bool(vals[N - 1] > vals[N - 2]) for N in range(N_from + 1, stripe.N_max + 1)]


@dataclass
class Excursion:
    """A verified stretch on which f_x is identically 1.

    ``tau`` is the entry parameter with x + tau (1, lambda) in the reduced
    strip; ``s = tau sqrt(1 + lambda^2)`` is the arclength. The interval
    [s, s + T_N / 2] lies in E_N.
    """

    N: int
    tau: Fraction
    s: float
    T_N: float
    interval: tuple
    probes: list
    probes_mp: list


def _phase_interval(stripe, N, x1: Fraction, x2: Fraction, tau: Fraction, lam_lo, lam_hi):
    p, q = stripe.pq(N)
    base = -p * x1 + q * x2
    return base + tau * (q * lam_lo - p), base + tau * (q * lam_hi - p)


def _interval_in(lo: Fraction, hi: Fraction, a: Fraction, b: Fraction) -> bool:
    k = math.floor(lo)
    if math.floor(hi) != k and hi != k + 1:
        return False
    return a <= lo - k and hi - k <= b


def locate_excursion(stripe: LiouvilleStripe, base_point, N: int, budget: float | None = None) -> Excursion:
    """Find s with x + s eta in the reduced strip and verify f_x = 1 on [s, s + T_N/2].

    Membership at t in {0, T_N/4, T_N/2} is checked twice: by rational
    interval arithmetic on a bracket of lambda, and by evaluating the point in
    1024-bit floating point.

    Raises
    ------
    RuntimeError
        If the entry parameter exceeds ``budget`` (arclength units).
    """
    if not 1 <= N <= stripe.N_max:
        raise ValueError("N outside stored range")
    x1, x2 = Fraction(base_point[0]), Fraction(base_point[1])
    p, q = stripe.pq(N)
    m = stripe.strip_indices[N - 1]
    three = 3**N
    lam_lo, lam_hi = liouville_bracket(N + 3)
    ph0 = stripe.phase_exact(N, x1, x2)
    if Fraction(m, three) <= ph0 <= Fraction(2 * m + 1, 2 * three):
        tau = Fraction(0)
    else:
        aim = Fraction(4 * m + 1, 4 * three)
        delta = (aim - ph0) % 1
        tau = delta / (q * lam_lo - p)
    lo, hi = _phase_interval(stripe, N, x1, x2, tau, lam_lo, lam_hi)
    if not _interval_in(lo, hi, Fraction(m, three), Fraction(2 * m + 1, 2 * three)):
        raise ArithmeticError("entry point not certified in the reduced strip")
    T = excursion_time(stripe, N)
    with mpmath.workprec(_LAMBDA_PREC):
        s_mp = mpmath.mpf(tau.numerator) / tau.denominator * mpmath.sqrt(1 + stripe.lam**2)
    if budget is not None and s_mp > budget:
        raise RuntimeError("search budget exhausted before entering the reduced strip")
    probes, probes_mp = [], []
    e1, e2 = stripe.eta()
    for c in (Fraction(0), Fraction(1, 4), Fraction(1, 2)):
        # along the line the phase grows by exactly c 3^-N after time c T_N
        plo, phi = lo + c / three, hi + c / three
        probes.append(_interval_in(plo, phi, Fraction(m, three), Fraction(m + 1, three)))
        with mpmath.workprec(_LAMBDA_PREC):
            t = s_mp + mpmath.mpf(c.numerator) / c.denominator * T
            y1 = mpmath.mpf(x1.numerator) / x1.denominator + t * e1
            y2 = mpmath.mpf(x2.numerator) / x2.denominator + t * e2
            ph = -p * y1 + q * y2
            ph = ph - mpmath.floor(ph)
            probes_mp.append(bool(m <= ph * three <= m + 1))
    return Excursion(N, tau, float(s_mp), float(T), (float(s_mp), float(s_mp + T / 2)), probes, probes_mp)


def torus_membership_mc(stripe: LiouvilleStripe, n: int, seed: int, reduced: bool = False) -> float:
    """Fraction of dyadic torus points k / 2^32 lying in the union of strips.

    The phase -p k1 + q k2 is computed modulo 2^32 in unsigned integer
    arithmetic and compared exactly with m 2^32 / 3^N.
    """
    words = uniforms_at(seed, np.arange(n), family=2)
    k1 = (words[:, 0] * 2.0**32).astype(np.uint64)
    k2 = (words[:, 1] * 2.0**32).astype(np.uint64)
    mod = np.uint64(0xFFFFFFFF)
    hit = np.zeros(n, dtype=bool)
    for N in range(1, stripe.N_max + 1):
        p, q = stripe.pq(N)
        m = stripe.strip_indices[N - 1]
        pm = np.uint64((-p) % (1 << 32))
        qm = np.uint64(q % (1 << 32))
        with np.errstate(over="ignore"):
            ph = (pm * k1 + qm * k2) & mod
        scaled = ph * np.uint64(3**N)
        lo = np.uint64(m << 32)
        top = (2 * m + 1) << 31 if reduced else (m + 1) << 32
        hit |= (scaled >= lo) & (scaled <= np.uint64(top))
    return float(hit.mean())


# ---------------------------------------------------------------------------
# d-dimensional product media
# ---------------------------------------------------------------------------


class ConstantStripe:
    """theta^stripe identically equal to ``value``."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, x1):
        return np.full(np.shape(x1), self.value)

    def flat_on(self, lo: float, hi: float) -> bool:
        return self.value == 1.0


class StepStripe:
    """theta^stripe from a cell medium's theta column."""

    def __init__(self, medium: Medium1D):
        self.medium = medium

    def __call__(self, x1):
        return self.medium.theta(x1)

    def flat_on(self, lo: float, hi: float) -> bool:
        if not self.medium.covers(lo, hi):
            return False
        _, _, th = self.medium.pieces(lo, hi)
        return bool(np.all(th == 1.0))


class LineStripe:
    """theta^stripe(s) = f_x(s) for a Liouville stripe and base point.

    ``flat_on`` answers from a certified excursion interval only.
    """

    def __init__(self, stripe: LiouvilleStripe, base_point, excursion: Excursion | None = None):
        self.stripe = stripe
        self.base_point = base_point
        self.excursion = excursion

    def __call__(self, x1):
        return self.stripe.f_values(self.base_point, x1).astype(float)

    def flat_on(self, lo: float, hi: float) -> bool:
        e = self.excursion
        return e is not None and all(e.probes) and e.interval[0] <= lo and hi <= e.interval[1]


@dataclass(frozen=True, eq=False)
class ProductMediumD:
    """theta(x) = theta^stripe(x1) * theta~(x) with a = identity.

    theta~ is i.i.d. on unit cubes [z - 1/2, z + 1/2)^d with values 1 - h and
    1 + h at equal odds, so its mean is exactly one.
    """

    d: int
    stripe: object
    seed: int
    h: float = 0.5

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if not 0 <= self.h < 1:
            raise ValueError("h must lie in [0, 1)")

    def transverse_cells(self, z: np.ndarray) -> np.ndarray:
        """theta~ on integer cells z of shape (n, d)."""
        z = np.asarray(z, dtype=np.int64)
        out = np.empty(z.shape[0])
        if self.d == 2:
            fam = z[:, 1] & 0xFFFFFFFF
        else:
            fam = ((z[:, 1] & 0xFFFFFFFF) << 32) | (z[:, 2] & 0xFFFFFFFF)
        for f in np.unique(fam):
            sel = fam == f
            u = uniforms_at(self.seed, z[sel, 0], family=int(f))[:, 0]
            out[sel] = np.where(u < 0.5, 1.0 - self.h, 1.0 + self.h)
        return out

    def theta_tilde(self, x: np.ndarray) -> np.ndarray:
        z = np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)
        return self.transverse_cells(z)

    def theta(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.stripe(x[:, 0]) * self.theta_tilde(x)

    def a(self, x: np.ndarray) -> np.ndarray:
        return np.ones(np.asarray(x).shape[0])


@dataclass(frozen=True, eq=False)
class Checkerboard2D:
    """I.i.d. theta on unit squares [z - 1/2, z + 1/2)^2 over a window.

    ``cells[i, j]`` is the value at z = (z_min[0] + i, z_min[1] + j).
    """

    z_min: tuple
    cells: np.ndarray
    seed: int | None = None

    def value_at_cells(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        i = np.asarray(z1) - self.z_min[0]
        j = np.asarray(z2) - self.z_min[1]
        if np.any(i < 0) or np.any(j < 0) or np.any(i >= self.cells.shape[0]) or np.any(j >= self.cells.shape[1]):
            raise IndexError("point outside the sampled window")
        return self.cells[i, j]

    def theta(self, x: np.ndarray) -> np.ndarray:
        z = np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)
        return self.value_at_cells(z[:, 0], z[:, 1])


def sample_checkerboard_2d(seed: int, window, values=(1.0, 2.0), probs=None) -> Checkerboard2D:
    """I.i.d. 2D checkerboard; window is ((z1_lo, z1_hi), (z2_lo, z2_hi)) inclusive."""
    (a0, a1), (b0, b1) = window
    values = np.asarray(values, dtype=float)
    probs = np.full(values.size, 1.0 / values.size) if probs is None else np.asarray(probs, dtype=float)
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    cells = np.empty((a1 - a0 + 1, b1 - b0 + 1))
    for j, z2 in enumerate(range(b0, b1 + 1)):
        u = uniforms(seed, a0, a1 - a0 + 1, family=z2 & 0xFFFFFFFFFFFFFFFF)[:, 0]
        cells[:, j] = values[np.minimum(np.searchsorted(cum, u, side="right"), values.size - 1)]
    return Checkerboard2D((a0, b0), cells, seed)
