"""Monte Carlo realization of the random polymer mass laws.

Total masses satisfy the in-law recursion

    M_{r+1} = (1/b) * sum_{i=1..b} prod_{j=1..b} M_r^{(i,j)}

with independent factors.  Populations approximate one step by drawing the
b^2 factors uniformly with replacement from the current population
(population dynamics); the exact tree of depth n is used only to assemble
cylinder-mass vectors on top of population-drawn leaves.

One stabilization is essential: the empirical mean obeys mean' = mean^b, so
an O(N^-1/2) sampling drift at depth m is amplified by b^m and the raw
iteration leaves double range within a few dozen steps at any feasible
population size.  Each step therefore divides by the empirical mean, which
pins the mean at the exact value 1 of the target law; the divided-out
factors and the pre-normalization step means are recorded so the mean
preservation of one raw step remains a testable statistic.

No finite-level law is prescribed for the seeds (the target laws arise as a
continuum limit), so populations are seeded at a base level r0 = r - depth,
deep enough that the law is near the deterministic unit mass, with a
mean-one law matching the variance R(r0); seed insensitivity is part of the
test suite rather than an assumption.

Reproducibility: every stream is a Philox generator keyed by
(master seed, realm, index, chunk), so outputs are bit-reproducible for a
fixed chunk count regardless of thread count.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BudgetError, UsageError
from .lattice import LatticeParams, path_count_int
from .rfunction import SEED_KINDS, VarianceProfile, seed_raw_moments

# Stream realms (second key component after the master seed).
_REALM_SEED = 0
_REALM_EVOLVE = 1
_REALM_LEAF = 2

MEASURE_VECTOR_BUDGET = 1 << 16
MINIMUM_BASE_LEVEL = -16.0

POPULATION_MAGIC = b"DGMCPOP1"


def substream(master_seed: int, *key) -> np.random.Generator:
    """Counter-based generator for the given (master seed, key...) address."""
    entropy = (int(master_seed),) + tuple(int(k) for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class SeedSpec:
    """Mean-one seed law for the base level of the recursion.

    two-point: mass 1/2 at 1 +- sqrt(V); matches mean 1, variance V and has
    third central moment zero.  lognormal: mean-one lognormal of variance V.
    deterministic-one: the exact fixed point (V ignored).
    """

    kind: str = "two-point"

    def __post_init__(self):
        if self.kind not in SEED_KINDS:
            raise UsageError(f"unknown seed kind {self.kind!r}; choose from {SEED_KINDS}")

    def draw(self, rng: np.random.Generator, size: int, variance: float) -> np.ndarray:
        if self.kind == "deterministic-one":
            return np.ones(size)
        if variance < 0:
            raise UsageError("seed variance must be >= 0")
        if self.kind == "lognormal":
            sigma_sq = math.log1p(variance)
            sigma = math.sqrt(sigma_sq)
            return rng.lognormal(mean=-0.5 * sigma_sq, sigma=sigma, size=size)
        if variance > 1.0:
            raise UsageError(
                f"two-point seed needs variance <= 1 for nonnegative support, got {variance}"
            )
        sigma = math.sqrt(variance)
        signs = 2.0 * rng.integers(0, 2, size=size) - 1.0
        return 1.0 + sigma * signs

    def raw_moments(self, variance: float, k_max: int) -> list:
        return seed_raw_moments(self.kind, variance, k_max)


@dataclass(frozen=True)
class Provenance:
    b: int
    r: float
    base_level: float
    depth: int
    size: int
    seed_kind: str
    seed_variance: float
    master_seed: int
    chunks: int
    overflow_count: int = 0
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "b": self.b,
            "r": self.r,
            "base_level": self.base_level,
            "depth": self.depth,
            "size": self.size,
            "seed_kind": self.seed_kind,
            "seed_variance": self.seed_variance,
            "master_seed": self.master_seed,
            "chunks": self.chunks,
            "overflow_count": self.overflow_count,
        }
        if self.detail:
            out["detail"] = dict(self.detail)
        return out


@dataclass
class MassPopulation:
    """An empirical population of total masses at parameter r."""

    r: float
    masses: np.ndarray
    provenance: Provenance

    @property
    def size(self) -> int:
        return self.masses.size

    def mean_se(self):
        m = float(self.masses.mean())
        se = float(self.masses.std(ddof=1) / math.sqrt(self.size))
        return m, se

    def variance_se(self):
        """Sample variance and the standard error of that estimate."""
        dev_sq = (self.masses - self.masses.mean()) ** 2
        var = float(dev_sq.sum() / (self.size - 1))
        se = float(dev_sq.std(ddof=1) / math.sqrt(self.size))
        return var, se

    def central_moment_se(self, k: int):
        dev = (self.masses - self.masses.mean()) ** k
        return float(dev.mean()), float(dev.std(ddof=1) / math.sqrt(self.size))


def _chunk_sizes(total: int, chunks: int):
    base = total // chunks
    sizes = [base] * chunks
    for i in range(total - base * chunks):
        sizes[i] += 1
    return sizes


def _evolve_chunk(masses: np.ndarray, b: int, rng: np.random.Generator, count: int):
    idx = rng.integers(0, masses.size, size=(b, b, count))
    factors = masses[idx]
    return factors.prod(axis=1).sum(axis=0) / b


def _evolve_array(
    masses: np.ndarray, b: int, streams, chunks: int, threads: int
) -> np.ndarray:
    sizes = _chunk_sizes(masses.size, chunks)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(
                pool.map(
                    lambda ic: _evolve_chunk(masses, b, streams[ic[0]], ic[1]),
                    enumerate(sizes),
                )
            )
    else:
        parts = [_evolve_chunk(masses, b, streams[c], size) for c, size in enumerate(sizes)]
    return np.concatenate(parts)


def _renormalize(out: np.ndarray):
    """Divide by the empirical mean; returns (normalized, pre-mean, pre-SE)."""
    pre_mean = float(out.mean())
    pre_se = float(out.std(ddof=1) / math.sqrt(out.size))
    if not math.isfinite(pre_mean) or pre_mean <= 0:
        return out, pre_mean, pre_se
    return out / pre_mean, pre_mean, pre_se


def evolve_population(
    pop: MassPopulation,
    rng: np.random.Generator,
    chunks: int = 1,
    threads: int = 1,
    renormalize: bool = True,
) -> MassPopulation:
    """One renormalization step by resampling with replacement.

    With ``renormalize`` (the default) the output is divided by its empirical
    mean; the pre-normalization mean and its standard error are recorded in
    the provenance detail.
    """
    b = pop.provenance.b
    if pop.size == 0:
        raise UsageError("cannot evolve an empty population")
    if pop.size < b * b:
        raise UsageError(f"population size {pop.size} is below b^2 = {b * b}")
    streams = rng.spawn(chunks)
    out = _evolve_array(pop.masses, b, streams, chunks, threads)
    detail = dict(pop.provenance.detail)
    if renormalize:
        out, pre_mean, pre_se = _renormalize(out)
        detail["step_pre_means"] = detail.get("step_pre_means", []) + [pre_mean]
        detail["step_pre_ses"] = detail.get("step_pre_ses", []) + [pre_se]
        if math.isfinite(pre_mean) and pre_mean > 0:
            detail["norm_log"] = detail.get("norm_log", 0.0) + math.log(pre_mean)
    overflow = int(np.count_nonzero(~np.isfinite(out)))
    prov = replace(
        pop.provenance,
        r=pop.r + 1.0,
        overflow_count=pop.provenance.overflow_count + overflow,
        detail=detail,
    )
    return MassPopulation(pop.r + 1.0, out, prov)


def simulate_mass_trajectory(
    b: int,
    r: float,
    seed_spec: SeedSpec,
    depth: int,
    size: int,
    master_seed: int,
    snapshot_levels=(),
    chunks: int = 1,
    threads: int = 1,
    profile: "VarianceProfile | None" = None,
) -> dict:
    """Population at r plus copies captured at intermediate trajectory levels.

    Seeds ``size`` draws of the seed law at r0 = r - depth (enforced to lie
    at or below the asymptotic validity level) and applies ``depth``
    population-dynamics steps with per-(iteration, chunk) streams.  Returns
    {level: MassPopulation} with the final level r always present.
    """
    if depth < 1:
        raise UsageError("depth must be >= 1")
    if size < b * b:
        raise UsageError(f"population size {size} is below b^2 = {b * b}")
    base_level = r - depth
    if base_level > MINIMUM_BASE_LEVEL:
        raise UsageError(
            f"base level r - depth = {base_level} is above {MINIMUM_BASE_LEVEL}; "
            f"increase depth so the asymptotic seed is in its validity regime"
        )
    offsets = {}
    for level in snapshot_levels:
        off = int(round(level - base_level))
        if not (0 < off <= depth) or abs(base_level + off - level) > 1e-9:
            raise UsageError(
                f"snapshot level {level} is not an integer step of the trajectory "
                f"{base_level}..{r}"
            )
        offsets[off] = float(level)
    profile = profile or VarianceProfile(b)
    variance = profile.evaluate_R(base_level)

    sizes = _chunk_sizes(size, chunks)
    masses = np.concatenate(
        [
            seed_spec.draw(substream(master_seed, _REALM_SEED, 0, c), n_c, variance)
            for c, n_c in enumerate(sizes)
        ]
    )
    out = {}
    pre_means, pre_ses, norm_log = [], [], 0.0

    def provenance(level, snapshot):
        detail = {
            "step_pre_means": list(pre_means),
            "step_pre_ses": list(pre_ses),
            "norm_log": norm_log,
        }
        if snapshot:
            detail["snapshot_of"] = r
        return Provenance(
            b=b,
            r=level,
            base_level=base_level,
            depth=int(round(level - base_level)),
            size=size,
            seed_kind=seed_spec.kind,
            seed_variance=variance,
            master_seed=master_seed,
            chunks=chunks,
            overflow_count=int(np.count_nonzero(~np.isfinite(masses))),
            detail=detail,
        )

    for iteration in range(1, depth + 1):
        streams = [
            substream(master_seed, _REALM_EVOLVE, iteration, c) for c in range(chunks)
        ]
        masses = _evolve_array(masses, b, streams, chunks, threads)
        masses, pre_mean, pre_se = _renormalize(masses)
        pre_means.append(pre_mean)
        pre_ses.append(pre_se)
        if math.isfinite(pre_mean) and pre_mean > 0:
            norm_log += math.log(pre_mean)
        if iteration in offsets:
            level = offsets[iteration]
            out[level] = MassPopulation(level, masses.copy(), provenance(level, True))

    out[r] = MassPopulation(r, masses, provenance(r, False))
    return out


def simulate_mass_law(
    b: int,
    r: float,
    seed_spec: SeedSpec,
    depth: int,
    size: int,
    master_seed: int,
    chunks: int = 1,
    threads: int = 1,
    profile: "VarianceProfile | None" = None,
) -> MassPopulation:
    """Population of total masses at r (see :func:`simulate_mass_trajectory`)."""
    return simulate_mass_trajectory(
        b,
        r,
        seed_spec,
        depth,
        size,
        master_seed,
        chunks=chunks,
        threads=threads,
        profile=profile,
    )[r]


def fractional_moment(pop: MassPopulation, theta: float):
    """Sample mean and standard error of mass^theta."""
    if not (0.0 < theta <= 1.0):
        raise UsageError(f"theta must lie in (0, 1], got {theta}")
    vals = pop.masses**theta
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size))
    return est, se


# -- cylinder-mass vectors -----------------------------------------------------


@dataclass
class MeasureSample:
    """One realization of the cylinder-mass vector at (r, n).

    ``masses[path_index(p)]`` is the mass of cylinder p; ``child_subtotals``
    holds the top-level (branch, segment) sub-measure totals used by the
    additivity audit.
    """

    r: float
    n: int
    b: int
    masses: np.ndarray
    child_subtotals: np.ndarray  # shape (b, b)
    provenance: Provenance

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def additivity_gap(self) -> float:
        """Relative gap between the vector total and its recursive assembly."""
        recombined = self.child_subtotals.prod(axis=1).sum() / self.b
        return abs(self.total - recombined) / max(abs(recombined), 1e-300)


def _check_measure_budget(b: int, n: int):
    params = LatticeParams(b, b)
    count = path_count_int(params, n)
    if count > MEASURE_VECTOR_BUDGET or b ** (2 * n) > MEASURE_VECTOR_BUDGET:
        feasible = max(
            k
            for k in range(n)
            if path_count_int(params, k) <= MEASURE_VECTOR_BUDGET
            and b ** (2 * k) <= MEASURE_VECTOR_BUDGET
        )
        raise BudgetError(
            f"cylinder vector at generation {n} needs |Gamma_n| = {count} entries "
            f"and b^(2n) = {b ** (2 * n)} leaves; largest feasible n is {feasible}"
        )


def upsilon_combine(sub_vectors: np.ndarray) -> np.ndarray:
    """One renormalization step on cylinder vectors.

    ``sub_vectors[..., i, j, :]`` holds the b x b sub-measure vectors; branch
    ``i`` contributes the flattened outer product over its b segments, and the
    blocks are concatenated in branch order and divided by b.  The layout
    matches the canonical cylinder index of the lattice module.
    """
    b = sub_vectors.shape[-3]
    branch_vecs = []
    for i in range(b):
        v = sub_vectors[..., i, 0, :]
        for j in range(1, b):
            w = sub_vectors[..., i, j, :]
            v = (v[..., :, None] * w[..., None, :]).reshape(*v.shape[:-1], -1)
        branch_vecs.append(v)
    return np.concatenate(branch_vecs, axis=-1) / b


def _assemble(leaves: np.ndarray, b: int, n: int) -> np.ndarray:
    """Cylinder vector from hierarchically ordered leaf masses (leading axes batch)."""
    if n == 0:
        return leaves
    block = leaves.shape[-1] // (b * b)
    children = np.stack(
        [
            np.stack(
                [
                    _assemble(
                        leaves[..., (i * b + j) * block : (i * b + j + 1) * block],
                        b,
                        n - 1,
                    )
                    for j in range(b)
                ],
                axis=-2,
            )
            for i in range(b)
        ],
        axis=-3,
    )
    return upsilon_combine(children)


def default_leaf_population(
    b: int,
    r: float,
    n: int,
    depth: int,
    seed_spec: SeedSpec,
    master_seed: int,
    pop_size: int = 1_000_000,
    chunks: int = 1,
    threads: int = 1,
    profile: "VarianceProfile | None" = None,
) -> MassPopulation:
    """Population at the leaf level r - n used to draw measure-sample leaves."""
    if depth < n + 1:
        raise UsageError(f"depth {depth} must exceed the generation {n}")
    return simulate_mass_law(
        b,
        r - n,
        seed_spec,
        depth - n,
        pop_size,
        master_seed,
        chunks=chunks,
        threads=threads,
        profile=profile,
    )


def sample_measure_batch(
    b: int,
    r: float,
    n: int,
    count: int,
    leaf_population: MassPopulation,
    master_seed: int,
) -> np.ndarray:
    """Cylinder-mass vectors for ``count`` independent realizations.

    Returns an array of shape (count, |Gamma_n|); realization ``i`` draws its
    leaves from the substream (master seed, leaf realm, i).
    """
    _check_measure_budget(b, n)
    if leaf_population.r != r - n:
        raise UsageError(
            f"leaf population is at r = {leaf_population.r}, need r - n = {r - n}"
        )
    n_leaves = b ** (2 * n)
    pool = leaf_population.masses
    leaves = np.empty((count, n_leaves))
    for i in range(count):
        rng = substream(master_seed, _REALM_LEAF, i)
        leaves[i] = pool[rng.integers(0, pool.size, size=n_leaves)]
    return _assemble(leaves, b, n)


def sample_measure_cylinders(
    b: int,
    r: float,
    n: int,
    depth: int,
    seed_spec: SeedSpec,
    master_seed: int,
    leaf_population: "MassPopulation | None" = None,
    pop_size: int = 1_000_000,
    chunks: int = 1,
    profile: "VarianceProfile | None" = None,
) -> MeasureSample:
    """One cylinder-mass realization at (r, n) over population-drawn leaves."""
    if n < 1:
        raise UsageError("generation must be >= 1")
    _check_measure_budget(b, n)
    if leaf_population is None:
        leaf_population = default_leaf_population(
            b, r, n, depth, seed_spec, master_seed, pop_size, chunks=chunks, profile=profile
        )
    n_leaves = b ** (2 * n)
    rng = substream(master_seed, _REALM_LEAF, 0)
    leaves = leaf_population.masses[
        rng.integers(0, leaf_population.size, size=n_leaves)
    ]
    masses = _assemble(leaves, b, n)
    block = n_leaves // (b * b)
    subtotals = np.array(
        [
            [
                _assemble(leaves[(i * b + j) * block : (i * b + j + 1) * block], b, n - 1).sum()
                for j in range(b)
            ]
            for i in range(b)
        ]
    )
    prov = replace(
        leaf_population.provenance,
        r=r,
        detail={"generation": n, "leaves": n_leaves, "leaf_level": r - n},
    )
    return MeasureSample(r, n, b, masses, subtotals, prov)


# -- population persistence ----------------------------------------------------


def write_population(path, pop: MassPopulation):
    """Binary snapshot: magic, version header (JSON), then little-endian float64."""
    header = {"version": 1, **pop.provenance.to_dict()}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(POPULATION_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(pop.masses.astype("<f8").tobytes())


def read_population(path) -> MassPopulation:
    with open(path, "rb") as fh:
        magic = fh.read(len(POPULATION_MAGIC))
        if magic != POPULATION_MAGIC:
            raise UsageError(f"{path} is not a population snapshot (bad magic {magic!r})")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != header["size"]:
        raise UsageError(
            f"{path}: expected {header['size']} masses, found {data.size}"
        )
    prov = Provenance(
        b=header["b"],
        r=header["r"],
        base_level=header["base_level"],
        depth=header["depth"],
        size=header["size"],
        seed_kind=header["seed_kind"],
        seed_variance=header["seed_variance"],
        master_seed=header["master_seed"],
        chunks=header["chunks"],
        overflow_count=header["overflow_count"],
        detail=header.get("detail", {}),
    )
    return MassPopulation(header["r"], data.copy(), prov)
