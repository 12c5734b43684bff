"""Total-mass variance profile R(r), its derivative, and the moment ladder.

R is the increasing solution of the one-step renormalization recursion

    R(r + 1) = psi_b(R(r)),        psi_b(x) = ((1 + x)^b - 1) / b,

pinned by its vanishing asymptotics as r -> -infinity,

    R(r) = kappa^2/(-r) + kappa^2 * eta * log(-r)/r^2 + O(log^2(-r)/r^3),

with kappa^2 = 2/(b - 1) and eta = (b + 1)/(3 (b - 1)).  Because the recursion
admits a one-parameter family of vanishing solutions (translates of each
other, which shift the 1/r^2 constant term), the stated error bound pins the
solution uniquely: it forces the log-free 1/r^2 coefficient to zero.

Evaluation strategy: seed far below the target at r0 = r - m with a truncated
asymptotic series, iterate psi_b forward m times, and double m until two
successive answers agree to tolerance.  The forward map amplifies seed error
by roughly m^2 in absolute terms, so the two-term seed alone cannot reach
1e-12; :func:`asymptotic_expansion` therefore extends the series to arbitrary
order with exact rational coefficients derived from the recursion itself
(the first two reproduce kappa^2 and kappa^2*eta).  The orbit is iterated in
40-digit arithmetic and cached per residue class r mod 1, so the recursion
identity psi_b(R(r)) = R(r+1) holds to rounding on any evaluated grid.

R'(r) rides along the same orbit via the differentiated recursion
R'(r + 1) = (1 + R(r))^(b-1) R'(r), seeded with the series derivative.

Raw total-mass moments follow the map obtained from the in-law recursion
M_{r+1} = (1/b) * sum_i prod_j M_r^{(i,j)} with independent factors:

    m_k(r + 1) = b^(-k) * sum_{k_1+...+k_b = k} multinomial(k; k_1..k_b)
                 * prod_i m_{k_i}(r)^b ,

iterated from a seed law of prescribed mean 1 and variance R(r0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import mpmath as mp
import numpy as np

from .errors import ConvergenceError, DomainError, RangeError, UsageError

MOMENT_ORDER_BUDGET = 16
_FLOAT_CAP = 1e300

SEED_KINDS = ("deterministic-one", "lognormal", "two-point")


def kappa_sq(b: int) -> float:
    return 2.0 / (b - 1)


def eta(b: int) -> float:
    return (b + 1) / (3.0 * (b - 1))


def psi(b: int, x: float) -> float:
    """((1 + x)^b - 1)/b for x >= 0, stable for x << 1 via expm1/log1p."""
    if not isinstance(b, (int, np.integer)) or b < 2:
        raise UsageError(f"b must be an integer >= 2, got {b}")
    if x < 0:
        raise DomainError(f"psi is restricted to x >= 0, got {x}")
    return math.expm1(b * math.log1p(x)) / b


def asymptotic_R_two_term(b: int, r: float) -> float:
    """The quoted two-term vanishing asymptotic, valid for r << 0."""
    if r >= -1.0:
        raise DomainError("two-term asymptotic requires r << 0")
    t = -r
    k2 = kappa_sq(b)
    return k2 / t + k2 * eta(b) * math.log(t) / t**2


# -- exact asymptotic expansion ----------------------------------------------
#
# Ansatz: with t = -r and L = log t,
#     R(r) = sum_{k>=1} P_k(L) / t^k,  deg P_k = k - 1,
# and the recursion y(t-1) = psi_b(y(t)) determines every coefficient once
# the leading coefficient kappa^2 and the log-free 1/t^2 coefficient (zero,
# by the stated error bound) are fixed.  All series arithmetic below is over
# Fractions; a key (k, j) holds the coefficient of L^j / t^k.


def _series_mul(u, v, k_cap):
    out = {}
    for (k1, j1), c1 in u.items():
        for (k2, j2), c2 in v.items():
            k = k1 + k2
            if k > k_cap:
                continue
            key = (k, j1 + j2)
            out[key] = out.get(key, Fraction(0)) + c1 * c2
    return {key: c for key, c in out.items() if c != 0}


def _psi_series(y, b, k_cap):
    out = {}
    power = dict(y)
    for d in range(1, b + 1):
        coef = Fraction(math.comb(b, d), b)
        for key, c in power.items():
            out[key] = out.get(key, Fraction(0)) + coef * c
        if d < b:
            power = _series_mul(power, y, k_cap)
    return {key: c for key, c in out.items() if c != 0}


def _shift_series(y, k_cap):
    """Expand y(t - 1) as a series in 1/t and L = log t."""
    # 1/(t-1)^k = sum_i binom(k-1+i, i) t^-(k+i)
    inv_pow = {}
    for k in range(1, k_cap + 1):
        inv_pow[k] = {
            (k + i, 0): Fraction(math.comb(k - 1 + i, i))
            for i in range(0, k_cap - k + 1)
        }
    # delta = log(t-1) - log t = -sum_{i>=1} t^-i / i
    delta = {(i, 0): Fraction(-1, i) for i in range(1, k_cap + 1)}
    max_j = max((j for (_, j) in y), default=0)
    delta_pow = {0: {(0, 0): Fraction(1)}}
    for m in range(1, max_j + 1):
        delta_pow[m] = _series_mul(delta_pow[m - 1], delta, k_cap)

    out = {}
    for (k, j), c in y.items():
        for m in range(0, j + 1):
            binom = Fraction(math.comb(j, m))
            base = _series_mul(inv_pow[k], delta_pow[m], k_cap)
            for (kk, jj), cc in base.items():
                key = (kk, jj + (j - m))
                out[key] = out.get(key, Fraction(0)) + c * binom * cc
    return {key: c for key, c in out.items() if c != 0}


def _residual_coeff(coeffs, b, k_cap, key):
    res = _psi_series(coeffs, b, k_cap)
    shifted = _shift_series(coeffs, k_cap)
    for kk, cc in shifted.items():
        res[kk] = res.get(kk, Fraction(0)) - cc
    return res.get(key, Fraction(0))


@lru_cache(maxsize=None)
def asymptotic_expansion(b: int, order: int):
    """Exact series coefficients {(k, j): Fraction} of R through 1/t^order."""
    if b < 2 or order < 2:
        raise UsageError("need b >= 2 and order >= 2")
    k_cap = order + 1
    coeffs = {(1, 0): Fraction(2, b - 1), (2, 0): Fraction(0)}
    for k in range(2, order + 1):
        # Coefficients of order k are determined by the balance at order
        # k + 1, so the series can be truncated there while solving.
        for j in range(k - 1, -1, -1):
            if (k, j) in coeffs:
                continue
            # The residual is affine in the unknown; find an equation at
            # order k+1 where its linear coefficient is nonzero (the L^j
            # equation except at k = 2, where it degenerates to L^(j-1)).
            solved = False
            for jj in range(j, -1, -1):
                eq = (k + 1, jj)
                coeffs[(k, j)] = Fraction(0)
                r0 = _residual_coeff(coeffs, b, k + 1, eq)
                coeffs[(k, j)] = Fraction(1)
                r1 = _residual_coeff(coeffs, b, k + 1, eq)
                slope = r1 - r0
                if slope != 0:
                    coeffs[(k, j)] = -r0 / slope
                    solved = True
                    break
            if not solved:
                raise RuntimeError(f"no determining equation for coefficient {(k, j)}")
    # Self-check: every balanced order must now vanish identically.
    res = _psi_series(coeffs, b, k_cap)
    shifted = _shift_series(coeffs, k_cap)
    for key, cc in shifted.items():
        res[key] = res.get(key, Fraction(0)) - cc
    bad = {key: c for key, c in res.items() if key[0] <= order + 1 and c != 0}
    if bad:
        raise RuntimeError(f"asymptotic expansion failed to balance: {bad}")
    return coeffs


def _seed_pair_mp(coeffs, t):
    """Series value of (R, R') at r = -t in the active mpmath precision."""
    L = mp.log(t)
    R = mp.mpf(0)
    Rp = mp.mpf(0)
    for (k, j), c in coeffs.items():
        c_mp = mp.mpf(c.numerator) / mp.mpf(c.denominator)
        Lj = L**j
        R += c_mp * Lj / t**k
        deriv = k * Lj
        if j:
            deriv -= j * L ** (j - 1)
        Rp += c_mp * deriv / t ** (k + 1)
    return R, Rp


class _Orbit:
    """One residue class of the recursion, iterated upward from a deep seed."""

    __slots__ = ("xi", "base_floor", "depth", "values", "mp_state")

    def __init__(self, xi, base_floor, depth, values, mp_state):
        self.xi = xi
        self.base_floor = base_floor
        self.depth = depth
        self.values = values  # list of (R, R') float pairs, offset i <-> r = xi + base_floor + i
        self.mp_state = mp_state  # mpf pair at the top cached offset


@dataclass
class VarianceProfile:
    """Evaluator for R and R' pinned by the r -> -infinity asymptotics.

    ``seed_depth`` is the initial iteration count from the asymptotic seed;
    it is doubled until two successive evaluations agree within ``tolerance``
    (relative for values above 1).
    """

    b: int
    seed_depth: int = 1024
    tolerance: float = 1e-12
    seed_order: int = 10
    max_seed_depth: int = 1 << 16
    precision_dps: int = 40
    _orbits: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.b < 2:
            raise UsageError("b must be >= 2")
        if self.seed_depth < 1:
            raise UsageError("seed_depth must be >= 1")

    @property
    def kappa_sq(self) -> float:
        return kappa_sq(self.b)

    @property
    def eta(self) -> float:
        return eta(self.b)

    # -- orbit machinery ----------------------------------------------------

    def _psi_mp(self, x):
        return ((1 + x) ** self.b - 1) / self.b

    def _step_mp(self, pair):
        R, Rp = pair
        return self._psi_mp(R), (1 + R) ** (self.b - 1) * Rp

    def _run_orbit(self, xi, base_floor, steps):
        """Seed at r = xi + base_floor and iterate; returns float cache + top state."""
        coeffs = asymptotic_expansion(self.b, self.seed_order)
        with mp.workdps(self.precision_dps):
            t0 = -(mp.mpf(xi) + base_floor)
            state = _seed_pair_mp(coeffs, t0)
            values = [(float(state[0]), float(state[1]))]
            for _ in range(steps):
                state = self._step_mp(state)
                R_f = float(state[0])
                if not math.isfinite(R_f) or R_f > _FLOAT_CAP:
                    raise RangeError(
                        f"R overflows double precision above r = "
                        f"{xi + base_floor + len(values) - 1} (b={self.b})"
                    )
                values.append((R_f, float(state[1])))
        return values, state

    def _build_orbit(self, xi, probe_floor):
        depth = self.seed_depth
        prev = None
        while depth <= self.max_seed_depth:
            base_floor = probe_floor - depth
            values, state = self._run_orbit(xi, base_floor, depth)
            probe_val = values[-1][0]
            if prev is not None:
                scale = max(1.0, abs(probe_val))
                if abs(probe_val - prev) <= self.tolerance * scale:
                    return _Orbit(xi, base_floor, depth, values, state)
            prev = probe_val
            depth *= 2
        raise ConvergenceError(
            f"R evaluation did not stabilize within depth {self.max_seed_depth} "
            f"at r ~ {xi + probe_floor} (b={self.b})",
            last_iterates=(prev, probe_val),
        )

    def _extend_orbit(self, orbit, top_floor):
        need = top_floor - orbit.base_floor + 1 - len(orbit.values)
        if need <= 0:
            return
        with mp.workdps(self.precision_dps):
            for _ in range(need):
                state = self._step_mp(orbit.mp_state)
                R_f = float(state[0])
                if not math.isfinite(R_f) or R_f > _FLOAT_CAP:
                    # leave the cache at the last representable level; the
                    # mpf state must stay aligned with the cached values
                    raise RangeError(
                        f"R overflows double precision above r = "
                        f"{orbit.xi + orbit.base_floor + len(orbit.values) - 1} (b={self.b})"
                    )
                orbit.values.append((R_f, float(state[1])))
                orbit.mp_state = state

    def _orbit_for(self, r: float) -> tuple:
        if not math.isfinite(r):
            raise UsageError("r must be finite")
        floor_r = math.floor(r)
        xi = r - floor_r
        orbit = self._orbits.get(xi)
        if orbit is None or floor_r < orbit.base_floor + 1:
            orbit = self._build_orbit(xi, floor_r)
            self._orbits[xi] = orbit
        self._extend_orbit(orbit, floor_r)
        return orbit, floor_r - orbit.base_floor

    # -- public surface ------------------------------------------------------

    def evaluate_pair(self, r: float) -> tuple:
        orbit, offset = self._orbit_for(r)
        return orbit.values[offset]

    def evaluate_R(self, r: float) -> float:
        return self.evaluate_pair(r)[0]

    def evaluate_R_prime(self, r: float) -> float:
        return self.evaluate_pair(r)[1]

    def orbit_depth(self, r: float) -> int:
        """Converged seed depth of the residue-class orbit through r."""
        orbit, _ = self._orbit_for(r)
        return orbit.depth


def evaluate_R(profile: VarianceProfile, r: float) -> float:
    return profile.evaluate_R(r)


def evaluate_R_prime(profile: VarianceProfile, r: float) -> float:
    return profile.evaluate_R_prime(r)


# -- moment ladder ------------------------------------------------------------


@lru_cache(maxsize=None)
def _composition_terms(b: int, k: int):
    """(multinomial coefficient, composition) pairs for k into b ordered parts."""

    def gen(remaining, parts_left):
        if parts_left == 1:
            yield (remaining,)
            return
        for first in range(remaining + 1):
            for rest in gen(remaining - first, parts_left - 1):
                yield (first,) + rest

    out = []
    for comp in gen(k, b):
        coef = math.factorial(k)
        for part in comp:
            coef //= math.factorial(part)
        out.append((coef, comp))
    return tuple(out)


def moment_recursion_step(b: int, moments) -> list:
    """Push raw moments m_0..m_K through one renormalization step."""
    moments = list(moments)
    if not moments or moments[0] != 1.0:
        raise UsageError("moment vector must start with m_0 = 1")
    k_max = len(moments) - 1
    if k_max > MOMENT_ORDER_BUDGET:
        raise UsageError(
            f"moment order {k_max} exceeds the composition budget {MOMENT_ORDER_BUDGET}"
        )
    out = [1.0]
    for k in range(1, k_max + 1):
        total = 0.0
        for coef, comp in _composition_terms(b, k):
            prod = 1.0
            for part in comp:
                if part:
                    prod *= moments[part]
            total += coef * prod**b
        out.append(total / b**k)
    return out


def seed_raw_moments(kind: str, variance: float, k_max: int) -> list:
    """Raw moments m_0..m_K of a mean-one seed law with the given variance.

    two-point: mass 1/2 at 1 +- sqrt(V) (third central moment zero; needs
    V <= 1 for nonnegative support).  lognormal: m_k = (1 + V)^C(k,2).
    deterministic-one ignores the variance and is the exact unit mass.
    """
    if kind not in SEED_KINDS:
        raise UsageError(f"unknown seed kind {kind!r}; choose from {SEED_KINDS}")
    if kind == "deterministic-one":
        return [1.0] * (k_max + 1)
    if variance < 0:
        raise DomainError("seed variance must be >= 0")
    if kind == "lognormal":
        return [(1.0 + variance) ** math.comb(k, 2) for k in range(k_max + 1)]
    if variance > 1.0:
        raise DomainError(
            f"two-point seed needs variance <= 1 for nonnegative support, got {variance}"
        )
    sigma = math.sqrt(variance)
    return [
        0.5 * ((1.0 + sigma) ** k + (1.0 - sigma) ** k) for k in range(k_max + 1)
    ]


def raw_to_centered(raw) -> list:
    """Centered moments about the preserved mean 1 via the binomial expansion."""
    k_max = len(raw) - 1
    out = []
    for m in range(k_max + 1):
        terms = [
            math.comb(m, i) * ((-1.0) ** (m - i)) * raw[i] for i in range(m + 1)
        ]
        out.append(math.fsum(terms))
    return out


@dataclass
class MomentTable:
    """Raw and centered total-mass moments over an r-grid."""

    b: int
    r_values: np.ndarray
    raw: np.ndarray       # shape (len(r_values), k_max + 1)
    centered: np.ndarray  # same shape; column m is the m-th centered moment
    seed_kind: str
    depth: int

    @property
    def k_max(self) -> int:
        return self.raw.shape[1] - 1


def moment_table(
    profile: VarianceProfile,
    r_values,
    k_max: int = 6,
    seed_kind: str = "two-point",
    depth: "int | None" = None,
) -> MomentTable:
    """Iterate the moment map from a matched seed up through an r-grid.

    All grid points must lie in one residue class mod 1 (they share the
    orbit).  ``depth`` counts iterations below the smallest grid point; by
    default it matches the variance orbit's converged seed depth.
    """
    r_values = np.atleast_1d(np.asarray(r_values, dtype=float))
    if r_values.size == 0:
        raise UsageError("empty r grid")
    fracs = r_values - np.floor(r_values)
    if not np.allclose(fracs, fracs[0], atol=1e-12):
        raise UsageError("moment_table grid must lie in a single residue class mod 1")
    order = np.argsort(r_values)
    r_sorted = r_values[order]
    r_min = float(r_sorted[0])
    if depth is None:
        depth = profile.orbit_depth(r_min)
    if depth < 1:
        raise UsageError("depth must be >= 1")

    base = r_min - depth
    moments = seed_raw_moments(seed_kind, profile.evaluate_R(base), k_max)
    raw_rows = np.full((r_values.size, k_max + 1), np.nan)
    targets = {}
    for pos, rv in enumerate(r_sorted):
        targets.setdefault(int(round(rv - base)), []).append(pos)
    step = 0
    last = max(targets)
    overflowed = False
    variance = moments[2] - 1.0 if k_max >= 2 else None
    while step < last and not overflowed:
        try:
            moments = moment_recursion_step(profile.b, moments)
            if variance is not None:
                # same map for the k = 2 channel in cancellation-free form:
                # m_2' - 1 = psi_b(m_2 - 1) exactly
                variance = psi(profile.b, variance)
                moments[2] = 1.0 + variance
        except OverflowError:
            overflowed = True
            break
        step += 1
        if any(not math.isfinite(m) or m > _FLOAT_CAP for m in moments):
            overflowed = True
            break
        if step in targets:
            for pos in targets[step]:
                raw_rows[pos] = moments

    centered_rows = np.array(
        [
            raw_to_centered(row) if np.all(np.isfinite(row)) else [math.nan] * (k_max + 1)
            for row in raw_rows
        ]
    )
    inverse = np.argsort(order)
    return MomentTable(
        b=profile.b,
        r_values=r_values,
        raw=raw_rows[inverse],
        centered=centered_rows[inverse],
        seed_kind=seed_kind,
        depth=depth,
    )


def centered_moment_table(
    profile: VarianceProfile,
    r: float,
    k_max: int = 6,
    seed_kind: str = "two-point",
    depth: "int | None" = None,
) -> MomentTable:
    """Single-point moment table (see :func:`moment_table`)."""
    return moment_table(profile, [r], k_max=k_max, seed_kind=seed_kind, depth=depth)
