"""Binary attribute spaces, per-group bias tables, splits and synthetic landscapes.

An attribute vector is a tuple of 0/1 ints. Tables store their keys as a
``(n, d)`` uint8 matrix sorted by integer code (``a[0]`` is the most
significant bit), so iteration order is canonical and reproducible.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from unfairgen import kernels

ENUMERATION_CAP = 20

AttributeVector = tuple


def as_attribute(a, dimension: int | None = None) -> tuple:
    """Validate a single attribute vector and return it as a tuple of ints."""
    arr = np.asarray(a)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"attribute vector must be a non-empty 1-d sequence, got shape {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"attribute vector must be binary, got {a!r}")
    if dimension is not None and arr.size != dimension:
        raise ValueError(f"attribute vector has dimension {arr.size}, expected {dimension}")
    return tuple(int(v) for v in arr)


def as_bit_matrix(bits, dimension: int | None = None) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d bit matrix, got shape {arr.shape}")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("bit matrix must contain only 0/1")
    if dimension is not None and arr.shape[1] != dimension:
        raise ValueError(f"bit matrix has dimension {arr.shape[1]}, expected {dimension}")
    return np.ascontiguousarray(arr, dtype=np.uint8)


@dataclass(frozen=True)
class AttributeSpace:
    dimension: int
    attribute_names: tuple | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.attribute_names is not None:
            names = tuple(str(n) for n in self.attribute_names)
            if len(names) != self.dimension:
                raise ValueError("need one attribute name per dimension")
            object.__setattr__(self, "attribute_names", names)

    @property
    def size(self) -> int:
        return 1 << self.dimension

    def names(self) -> tuple:
        return self.attribute_names or tuple(f"a{i}" for i in range(self.dimension))


@dataclass(frozen=True)
class SampleLossRecord:
    attribute: tuple
    loss: float

    def __post_init__(self):
        object.__setattr__(self, "attribute", as_attribute(self.attribute))
        if not math.isfinite(self.loss) or self.loss < 0:
            raise ValueError(f"loss must be finite and non-negative, got {self.loss}")


class GroupBiasTable:
    """Map from attribute vector to (bias, support count).

    Rows are kept sorted by integer code. Arrays are read-only views.
    """

    def __init__(self, bits, bias, count=None, attribute_names=None):
        bits = as_bit_matrix(bits)
        bias = np.asarray(bias, dtype=np.float64).reshape(-1)
        if count is None:
            count = np.ones(bias.shape[0], dtype=np.int64)
        count = np.asarray(count, dtype=np.int64).reshape(-1)
        if not (bits.shape[0] == bias.shape[0] == count.shape[0]):
            raise ValueError("bits, bias and count must have the same number of rows")
        if bits.shape[0] == 0:
            raise ValueError("a group bias table needs at least one key")
        if not np.all(np.isfinite(bias)) or np.any(bias < 0):
            raise ValueError("bias values must be finite and non-negative")
        if np.any(count < 1):
            raise ValueError("support counts must be >= 1")
        codes = kernels.pack_bits(bits)
        order = np.argsort(codes, kind="stable")
        codes = codes[order]
        if np.any(codes[1:] == codes[:-1]):
            raise ValueError("duplicate attribute vectors; use merge_duplicates first")
        self._bits = bits[order]
        self._bias = bias[order]
        self._count = count[order]
        self._codes = codes
        for arr in (self._bits, self._bias, self._count, self._codes):
            arr.setflags(write=False)
        self._index = {int(c): i for i, c in enumerate(codes)}
        self.space = AttributeSpace(bits.shape[1], attribute_names)

    @classmethod
    def from_mapping(cls, mapping: dict, attribute_names=None) -> "GroupBiasTable":
        """Build from ``{attribute: bias}`` or ``{attribute: (bias, count)}``."""
        keys, bias, count = [], [], []
        for a, v in mapping.items():
            keys.append(as_attribute(a))
            if isinstance(v, tuple):
                bias.append(v[0])
                count.append(v[1])
            else:
                bias.append(v)
                count.append(1)
        return cls(np.array(keys), bias, count, attribute_names)

    @property
    def dimension(self) -> int:
        return self._bits.shape[1]

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def bias(self) -> np.ndarray:
        return self._bias

    @property
    def count(self) -> np.ndarray:
        return self._count

    @property
    def codes(self) -> np.ndarray:
        return self._codes

    def __len__(self) -> int:
        return self._bits.shape[0]

    def __contains__(self, a) -> bool:
        return self.index_of(a) is not None

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroupBiasTable):
            return NotImplemented
        return (
            np.array_equal(self._bits, other._bits)
            and np.array_equal(self._bias, other._bias)
            and np.array_equal(self._count, other._count)
        )

    def __repr__(self) -> str:
        return f"GroupBiasTable(n={len(self)}, d={self.dimension})"

    def items(self) -> Iterator[tuple]:
        for row, b, c in zip(self._bits, self._bias, self._count):
            yield tuple(int(v) for v in row), float(b), int(c)

    def index_of(self, a) -> int | None:
        code = int(kernels.pack_bits(as_bit_matrix(a, self.dimension))[0])
        return self._index.get(code)

    def bias_of(self, a) -> float | None:
        i = self.index_of(a)
        return None if i is None else float(self._bias[i])

    def lookup_codes(self, codes) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised membership: returns ``(present, bias)`` with NaN for absent codes."""
        codes = np.asarray(codes, dtype=np.int64)
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, len(self) - 1)
        present = self._codes[pos] == codes
        bias = np.where(present, self._bias[pos], np.nan)
        return present, bias

    def lookup_bits(self, bits) -> tuple[np.ndarray, np.ndarray]:
        return self.lookup_codes(kernels.pack_bits(as_bit_matrix(bits, self.dimension)))

    def subset(self, rows) -> "GroupBiasTable":
        rows = np.asarray(rows, dtype=np.int64)
        return GroupBiasTable(self._bits[rows], self._bias[rows], self._count[rows],
                              self.space.attribute_names)

    def high_bias_count(self, tau: float) -> int:
        return int(np.count_nonzero(self._bias >= tau))

    def mean_bias(self) -> float:
        return float(self._bias.mean())


def merge_duplicates(bits, bias, count=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merge repeated attribute rows into one row with a count-weighted mean bias."""
    bits = as_bit_matrix(bits)
    bias = np.asarray(bias, dtype=np.float64)
    count = np.ones(bias.shape[0], dtype=np.int64) if count is None else np.asarray(count, dtype=np.int64)
    codes = kernels.pack_bits(bits)
    uniq, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    if uniq.size == codes.size:
        # nothing to merge; keep values bit-exact
        return bits[first], bias[first], count[first]
    total = np.bincount(inverse, weights=count.astype(np.float64))
    weighted = np.bincount(inverse, weights=bias * count)
    return bits[first], weighted / total, total.astype(np.int64)


def aggregate_arrays(bits, losses, attribute_names=None) -> GroupBiasTable:
    bits = as_bit_matrix(bits)
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    if bits.shape[0] == 0:
        raise ValueError("cannot aggregate an empty record list")
    if losses.shape[0] != bits.shape[0]:
        raise ValueError("one loss per record required")
    if not np.all(np.isfinite(losses)) or np.any(losses < 0):
        raise ValueError("losses must be finite and non-negative")
    keys, mean, count = merge_duplicates(bits, losses)
    return GroupBiasTable(keys, mean, count, attribute_names)


def aggregate_bias(records: Sequence[SampleLossRecord], attribute_names=None) -> GroupBiasTable:
    """Group per-sample losses by attribute vector; bias is the arithmetic mean."""
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    dims = {len(r.attribute) for r in records}
    if len(dims) != 1:
        raise ValueError(f"records have mixed dimensions {sorted(dims)}")
    for r in records:
        if r.loss < 0:
            raise ValueError("negative loss")
    bits = np.array([r.attribute for r in records], dtype=np.uint8)
    return aggregate_arrays(bits, [r.loss for r in records], attribute_names)


@dataclass(frozen=True)
class DatasetSplit:
    observation: GroupBiasTable
    holdout: GroupBiasTable

    def __post_init__(self):
        if np.intersect1d(self.observation.codes, self.holdout.codes).size:
            raise ValueError("observation and holdout share attribute vectors")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_by_group(table: GroupBiasTable, holdout_fraction: float, seed: int) -> DatasetSplit:
    """Partition the table's keys into observation and holdout sets.

    The holdout receives ``round(holdout_fraction * n)`` keys (half rounds up),
    clamped so that both sides keep at least one key.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must lie in (0, 1), got {holdout_fraction}")
    n = len(table)
    if n < 2:
        raise ValueError("need at least two groups to split")
    n_hold = min(max(round_half_up(holdout_fraction * n), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    hold = np.sort(perm[:n_hold])
    obs = np.sort(perm[n_hold:])
    return DatasetSplit(observation=table.subset(obs), holdout=table.subset(hold))


# -- enumeration -------------------------------------------------------------

def _check_cap(dimension: int, cap: int | None):
    cap = ENUMERATION_CAP if cap is None else cap
    if dimension > cap:
        raise ValueError(
            f"refusing to enumerate 2^{dimension} vectors (cap is 2^{cap}); "
            "pass a larger cap explicitly to override"
        )


def enumerate_codes(dimension: int, cap: int | None = None) -> np.ndarray:
    _check_cap(dimension, cap)
    return np.arange(1 << dimension, dtype=np.int64)


def enumerate_bits(dimension: int, cap: int | None = None) -> np.ndarray:
    return kernels.unpack_codes(enumerate_codes(dimension, cap), dimension)


def enumerate_space(space: AttributeSpace | int, cap: int | None = None,
                    chunk: int = 4096) -> Iterator[tuple]:
    """Yield every vector of the space once, in ascending binary order."""
    d = space.dimension if isinstance(space, AttributeSpace) else int(space)
    _check_cap(d, cap)
    total = 1 << d
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        for row in kernels.unpack_codes(codes, d):
            yield tuple(int(v) for v in row)


# -- synthetic landscapes ----------------------------------------------------

@dataclass(frozen=True)
class Cohort:
    """A partial assignment ``{index: bit}`` whose matching vectors get ``boost``."""

    assignment: dict
    boost: float

    def __post_init__(self):
        object.__setattr__(self, "assignment", {int(k): int(v) for k, v in dict(self.assignment).items()})
        if not self.assignment:
            raise ValueError("cohort needs a non-empty support")
        if any(v not in (0, 1) for v in self.assignment.values()):
            raise ValueError("cohort values must be 0/1")
        if self.boost < 0:
            raise ValueError("cohort boost must be >= 0")

    def mask_and_value(self, dimension: int) -> tuple[int, int]:
        mask = value = 0
        for i, bit in self.assignment.items():
            if not 0 <= i < dimension:
                raise ValueError(f"cohort index {i} outside dimension {dimension}")
            mask |= 1 << (dimension - 1 - i)
            value |= bit << (dimension - 1 - i)
        return mask, value

    def matches(self, a) -> bool:
        return all(a[i] == bit for i, bit in self.assignment.items())


@dataclass(frozen=True)
class SyntheticLandscape:
    """Deterministic bias function over ``{0,1}^d``.

    ``bias(a) = softplus(offset + sum_i linear[i] a_i + sum w_ij a_i a_j
    + sum_c boost_c [a matches c])``.
    """

    dimension: int
    offset: float = 0.0
    linear: tuple = ()
    pairwise: tuple = ()
    cohorts: tuple = ()
    marginals: tuple = ()
    noise_sigma: float = 0.0
    seed: int = 0
    attribute_names: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        d = self.dimension
        if d < 1:
            raise ValueError("dimension must be >= 1")
        linear = tuple(float(v) for v in self.linear) or (0.0,) * d
        marginals = tuple(float(v) for v in self.marginals) or (0.5,) * d
        if len(linear) != d or len(marginals) != d:
            raise ValueError("linear weights and marginals need one entry per dimension")
        if any(not 0.0 < p < 1.0 for p in marginals):
            raise ValueError("marginal probabilities must lie in (0, 1)")
        pairs = tuple((int(i), int(j), float(w)) for i, j, w in self.pairwise)
        for i, j, _ in pairs:
            if not (0 <= i < d and 0 <= j < d) or i == j:
                raise ValueError(f"bad pairwise term ({i}, {j})")
        cohorts = tuple(c if isinstance(c, Cohort) else Cohort(**c) for c in self.cohorts)
        for c in cohorts:
            c.mask_and_value(d)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "marginals", marginals)
        object.__setattr__(self, "pairwise", pairs)
        object.__setattr__(self, "cohorts", cohorts)

    def kernel_args(self) -> tuple:
        pairs = np.array(self.pairwise, dtype=np.float64).reshape(-1, 3)
        mv = np.array([c.mask_and_value(self.dimension) for c in self.cohorts], dtype=np.int64).reshape(-1, 2)
        return (
            self.dimension,
            float(self.offset),
            np.array(self.linear, dtype=np.float64),
            pairs[:, 0].astype(np.int64),
            pairs[:, 1].astype(np.int64),
            np.ascontiguousarray(pairs[:, 2]),
            np.ascontiguousarray(mv[:, 0]),
            np.ascontiguousarray(mv[:, 1]),
            np.array([c.boost for c in self.cohorts], dtype=np.float64),
        )

    def to_dict(self) -> dict:
        doc = {
            "dimension": self.dimension,
            "offset": self.offset,
            "linear": list(self.linear),
            "pairwise": [list(p) for p in self.pairwise],
            "cohorts": [
                {"assignment": {str(k): v for k, v in c.assignment.items()}, "boost": c.boost}
                for c in self.cohorts
            ],
            "marginals": list(self.marginals),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }
        if self.attribute_names is not None:
            doc["attribute_names"] = list(self.attribute_names)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticLandscape":
        required = {"dimension", "offset", "linear", "pairwise", "cohorts", "marginals", "noise_sigma", "seed"}
        missing = required - doc.keys()
        if missing:
            raise ValueError(f"landscape document missing keys: {sorted(missing)}")
        extra = doc.keys() - required - {"attribute_names"}
        if extra:
            raise ValueError(f"unknown landscape keys: {sorted(extra)}")
        return cls(
            dimension=int(doc["dimension"]),
            offset=float(doc["offset"]),
            linear=tuple(doc["linear"]),
            pairwise=tuple(tuple(p) for p in doc["pairwise"]),
            cohorts=tuple(Cohort(c["assignment"], float(c["boost"])) for c in doc["cohorts"]),
            marginals=tuple(doc["marginals"]),
            noise_sigma=float(doc["noise_sigma"]),
            seed=int(doc["seed"]),
            attribute_names=tuple(doc["attribute_names"]) if doc.get("attribute_names") else None,
        )


def landscape_bias(landscape: SyntheticLandscape, a) -> float:
    a = as_attribute(a, landscape.dimension)
    return float(landscape_bias_bits(landscape, np.array([a]))[0])


def landscape_bias_codes(landscape: SyntheticLandscape, codes) -> np.ndarray:
    return kernels.eval_landscape_codes(np.asarray(codes, dtype=np.int64), *landscape.kernel_args())


def landscape_bias_bits(landscape: SyntheticLandscape, bits) -> np.ndarray:
    bits = as_bit_matrix(bits, landscape.dimension)
    return landscape_bias_codes(landscape, kernels.pack_bits(bits))


def _draw_distinct_codes(landscape: SyntheticLandscape, n_groups: int, rng) -> np.ndarray:
    d = landscape.dimension
    p = np.array(landscape.marginals)
    if n_groups * 2 > (1 << d):
        # Dense regime: successive sampling without replacement has the same
        # law as rejecting duplicates, and terminates in bounded time.
        bits = enumerate_bits(d, cap=max(d, ENUMERATION_CAP))
        logp = bits @ np.log(p) + (1 - bits) @ np.log1p(-p)
        w = np.exp(logp - logp.max())
        return rng.choice(1 << d, size=n_groups, replace=False, p=w / w.sum()).astype(np.int64)
    seen: dict[int, None] = {}
    while len(seen) < n_groups:
        batch = (rng.random((max(64, 2 * (n_groups - len(seen))), d)) < p).astype(np.uint8)
        for code in kernels.pack_bits(batch):
            seen.setdefault(int(code))
            if len(seen) == n_groups:
                break
    return np.fromiter(seen, dtype=np.int64)


def sample_dataset(landscape: SyntheticLandscape, n_groups: int, samples_per_group: int,
                   seed: int | None = None) -> GroupBiasTable:
    """Draw distinct groups from the landscape marginals with noisy observed bias.

    Observed bias is ``max(0, bias + N(0, sigma / sqrt(samples_per_group)))``.
    """
    d = landscape.dimension
    if n_groups < 1 or samples_per_group < 1:
        raise ValueError("n_groups and samples_per_group must be >= 1")
    if d < 63 and n_groups > (1 << d):
        raise ValueError(f"n_groups={n_groups} exceeds the 2^{d} vectors of the space")
    rng = np.random.default_rng(landscape.seed if seed is None else seed)
    codes = _draw_distinct_codes(landscape, n_groups, rng)
    truth = landscape_bias_codes(landscape, codes)
    if landscape.noise_sigma > 0:
        noise = rng.standard_normal(n_groups) * landscape.noise_sigma / math.sqrt(samples_per_group)
        observed = np.maximum(0.0, truth + noise)
    else:
        observed = truth
    return GroupBiasTable(kernels.unpack_codes(codes, d), observed,
                          np.full(n_groups, samples_per_group, dtype=np.int64),
                          landscape.attribute_names)


def planted_landscape(dimension: int = 10, seed: int = 0, n_cohorts: int = 3,
                      cohort_size: int = 3, boost: float = 3.0, offset: float = -2.5,
                      noise_sigma: float = 0.3) -> SyntheticLandscape:
    """Random landscape with a low background and a few planted high-bias cohorts.

    Cohorts favour attribute values that are rare under the marginals, so
    high-bias groups are under-represented in sampled data.
    """
    rng = np.random.default_rng(seed)
    d = dimension
    marginals = rng.uniform(0.2, 0.45, size=d)
    linear = rng.normal(0.0, 0.25, size=d)
    n_pairs = min(d, d * (d - 1) // 2)
    pairs = []
    for _ in range(n_pairs):
        i, j = sorted(rng.choice(d, size=2, replace=False).tolist())
        pairs.append((i, j, float(rng.normal(0.0, 0.2))))
    cohorts = []
    size = min(cohort_size, d)
    for _ in range(n_cohorts):
        support = sorted(rng.choice(d, size=size, replace=False).tolist())
        values = (rng.random(size) < 0.8).astype(int)
        cohorts.append(Cohort({i: int(v) for i, v in zip(support, values)},
                              float(boost * rng.uniform(0.8, 1.2))))
    return SyntheticLandscape(
        dimension=d,
        offset=offset,
        linear=tuple(float(v) for v in linear),
        pairwise=tuple(pairs),
        cohorts=tuple(cohorts),
        marginals=tuple(float(v) for v in marginals),
        noise_sigma=noise_sigma,
        seed=seed,
    )


# -- file formats ------------------------------------------------------------

def _bit_header(d: int) -> list[str]:
    return [f"a{i}" for i in range(d)]


def _parse_bits_header(header: list[str], tail: Sequence[str]) -> int:
    d = len(header) - len(tail)
    if d < 1 or header[:d] != _bit_header(d) or header[d:] != list(tail):
        raise ValueError(f"unexpected CSV header {header}; expected a0..a{{d-1}},{','.join(tail)}")
    return d


def read_group_csv(path, attribute_names=None) -> GroupBiasTable:
    """Read ``a0,...,a{d-1},bias[,count]``; duplicate rows are merged."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        has_count = header[-1] == "count"
        d = _parse_bits_header(header, ["bias", "count"] if has_count else ["bias"])
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    bits = np.array([[int(v) for v in r[:d]] for r in rows])
    bias = np.array([float(r[d]) for r in rows])
    count = np.array([int(r[d + 1]) for r in rows]) if has_count else None
    return GroupBiasTable(*merge_duplicates(bits, bias, count), attribute_names)


def write_group_csv(table: GroupBiasTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_bit_header(table.dimension) + ["bias", "count"])
        for bits, b, c in table.items():
            writer.writerow(list(bits) + [repr(b), c])


def read_sample_csv(path) -> list[SampleLossRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        d = _parse_bits_header(header, ["loss"])
        return [SampleLossRecord(tuple(int(v) for v in r[:d]), float(r[d])) for r in reader if r]


def write_sample_csv(records: Iterable[SampleLossRecord], path) -> None:
    records = list(records)
    d = len(records[0].attribute)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_bit_header(d) + ["loss"])
        for r in records:
            writer.writerow(list(r.attribute) + [repr(r.loss)])


def load_landscape(path) -> SyntheticLandscape:
    return SyntheticLandscape.from_dict(json.loads(Path(path).read_text()))


def save_landscape(landscape: SyntheticLandscape, path) -> None:
    Path(path).write_text(json.dumps(landscape.to_dict(), indent=2) + "\n")
