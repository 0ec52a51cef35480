"""Low-discrepancy node sets: extensible shifted rank-1 lattices and
digitally shifted (optionally scrambled) Sobol' sequences, plus the base-2
digit arithmetic needed by the digitally shift-invariant kernels.

Point sets are generated in van der Corput order, so the first 2^m points of
any request are bit-identical to the points of the 2^m request (extensible by
doubling).  All randomness (shift, digital shift, scramble) is drawn from a
counter-based Philox generator keyed by a single 64-bit seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

DIGITS = 32  # binary digit places used for digital (XOR) arithmetic
_SCALE = float(2**DIGITS)
_DATA_DIR_ENV = "BAYESCUB_DATA_DIR"

try:  # single-pass point fill; the numpy fallback in lattice_points is
    # bit-identical (same scalar operation sequence, no contraction)
    from numba import njit as _njit

    @_njit(cache=True)
    def _fill_lattice(brev, hvec, shift, cap, inv, out):  # pragma: no cover
        n = brev.shape[0]
        d = hvec.shape[0]
        for i in range(n):
            b = brev[i]
            for ell in range(d):
                frac = np.float64((hvec[ell] * b) & cap) * inv + shift[ell]
                if frac >= 1.0:
                    frac -= 1.0
                out[i, ell] = frac

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


class CapacityError(ValueError):
    """Requested more points than the generator supports."""


def _data_path(name: str) -> str:
    override = os.environ.get(_DATA_DIR_ENV)
    if override:
        candidate = os.path.join(override, name)
        if os.path.exists(candidate):
            return candidate
    return os.path.join(os.path.dirname(__file__), "data", name)


def _check_range(start: int, stop: int, capacity: int) -> None:
    if not 0 <= start < stop:
        raise ValueError(f"empty or negative index range [{start}, {stop})")
    if stop > capacity:
        raise CapacityError(
            f"range [{start}, {stop}) exceeds generator capacity {capacity}"
        )
    # ranges are either [0, 2^m) or a doubling block [n, 2n)
    if not (start == 0 or start == stop - start):
        raise ValueError(f"range [{start}, {stop}) is not a power-of-2 prefix or doubling block")
    n = stop - start if start else stop
    if n & (n - 1):
        raise ValueError(f"block length {n} is not a power of 2")


def van_der_corput(i) -> np.ndarray | float:
    """Base-2 radical inverse: reflect the binary digits of i about the point.

    Exact for 0 <= i < 2^53.
    """
    scalar = np.isscalar(i)
    idx = np.atleast_1d(np.asarray(i, dtype=np.uint64))
    if idx.size and int(idx.max()) >= 1 << 53:
        raise ValueError("index too large for exact binary reflection")
    out = np.zeros(idx.shape, dtype=np.float64)
    rem = idx.copy()
    half = 0.5
    while rem.any():
        out += (rem & 1) * half
        rem >>= 1
        half *= 0.5
    return float(out[0]) if scalar else out


def bit_reverse(k: np.ndarray | int, m: int) -> np.ndarray | int:
    """Reverse the low m bits of k; the permutation behind van der Corput order."""
    scalar = np.isscalar(k)
    v = np.atleast_1d(np.asarray(k, dtype=np.uint64))
    out = np.zeros_like(v)
    for _ in range(m):
        out = (out << np.uint64(1)) | (v & np.uint64(1))
        v = v >> np.uint64(1)
    return int(out[0]) if scalar else out


@lru_cache(maxsize=24)
def _brev_table(m: int) -> np.ndarray:
    return bit_reverse(np.arange(1 << m, dtype=np.uint64), m)


@dataclass(frozen=True)
class NodeSet:
    """A block of low-discrepancy points plus the index range it covers."""

    points: np.ndarray        # (n, d) float64 in [0, 1)
    family: str               # "lattice" | "sobol"
    start: int                # covers indices [start, stop)
    stop: int
    int_points: np.ndarray | None = field(default=None, repr=False)  # sobol only

    @property
    def n(self) -> int:
        return self.stop - self.start

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class LatticeGenerator:
    """Shifted extensible rank-1 lattice: x_i = h * phi(i-1) + shift mod 1."""

    generating_vector: tuple[int, ...]
    shift: np.ndarray
    max_log2_n: int = 20

    def __post_init__(self):
        h = self.generating_vector
        if any(v % 2 == 0 or not 0 < v < (1 << self.max_log2_n) for v in h):
            raise ValueError("generating vector entries must be odd and < 2^m_max")
        shift = np.asarray(self.shift, dtype=np.float64)
        if shift.shape != (len(h),) or (shift < 0).any() or (shift >= 1).any():
            raise ValueError("shift must be a point of [0,1)^d")
        object.__setattr__(self, "shift", shift)

    @property
    def d(self) -> int:
        return len(self.generating_vector)

    @property
    def capacity(self) -> int:
        return 1 << self.max_log2_n

    def points(self, start: int, stop: int) -> NodeSet:
        return lattice_points(self, start, stop)


def lattice_points(gen: LatticeGenerator, start: int, stop: int) -> NodeSet:
    """Points x_i = (h * phi(i-1) + shift) mod 1 for i-1 in [start, stop).

    h * phi(i) mod 1 is reduced in exact integer arithmetic on the 2^m grid
    before the shift is added, so only the final shifted value rounds.
    """
    _check_range(start, stop, gen.capacity)
    m = max((stop - 1).bit_length(), 1)
    brev = _brev_table(m)[start:stop] << np.uint64(gen.max_log2_n - m)
    cap = np.uint64(gen.capacity - 1)
    pts = np.empty((stop - start, gen.d))
    inv = 1.0 / gen.capacity
    hvec = np.asarray(gen.generating_vector, dtype=np.uint64)
    if _HAVE_NUMBA and pts.size >= 1 << 14:
        _fill_lattice(brev, hvec, gen.shift, cap, inv, pts)
        return NodeSet(points=pts, family="lattice", start=start, stop=stop)
    for ell, h in enumerate(gen.generating_vector):
        frac = ((np.uint64(h) * brev) & cap).astype(np.float64)
        frac *= inv
        frac += gen.shift[ell]
        frac -= (frac >= 1.0)
        pts[:, ell] = frac
    return NodeSet(points=pts, family="lattice", start=start, stop=stop)


def lattice_lag_indices(gen: LatticeGenerator, m: int) -> np.ndarray:
    """Grid indices k with (x_i - x_1) mod 1 = (h * k / n) per dimension.

    Column ell of the result is (h_ell * n*phi(i-1)) mod n for i = 1..n, the
    exact lags of the first Gram column on the 1/n grid.
    """
    n = 1 << m
    if n > gen.capacity:
        raise CapacityError(f"2^{m} exceeds generator capacity {gen.capacity}")
    brev = _brev_table(m)
    h = np.asarray(gen.generating_vector, dtype=np.uint64)
    return (brev[:, None] * h[None, :]) & np.uint64(n - 1)


def default_lattice_vector(d: int) -> tuple[int, ...]:
    """The shipped d<=20 extensible generating vector (override via data file)."""
    return load_lattice_vector(_data_path("lattice_base2_m20_d20.txt"), d)


def load_lattice_vector(path: str, d: int) -> tuple[int, ...]:
    vec = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                vec.append(int(line))
    if d > len(vec):
        raise CapacityError(f"lattice vector file supports d <= {len(vec)}, requested {d}")
    return tuple(vec[:d])


def make_lattice(d: int, seed: int, m_max: int = 20,
                 vector_path: str | None = None) -> LatticeGenerator:
    """Lattice generator with the shipped vector and a seeded random shift."""
    vec = load_lattice_vector(vector_path, d) if vector_path else default_lattice_vector(d)
    rng = np.random.Generator(np.random.Philox(seed))
    shift = rng.random(d)
    return LatticeGenerator(generating_vector=vec, shift=shift, max_log2_n=m_max)


# ---------------------------------------------------------------------------
# Sobol'
# ---------------------------------------------------------------------------

def load_direction_numbers(path: str, d: int) -> np.ndarray:
    """Direction-number columns v_k = m_k * 2^(DIGITS-k) for d dimensions.

    The file uses the standard "d s a m_i" table format; dimension 1 is the
    identity (van der Corput) column.  Returns a (d, DIGITS) uint64 array.
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("d"):
                continue
            parts = line.split()
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]),
                         [int(x) for x in parts[3:]]))
    max_d = 1 + len(rows)
    if d > max_d:
        raise CapacityError(f"direction-number file supports d <= {max_d}, requested {d}")

    v = np.zeros((d, DIGITS), dtype=np.uint64)
    v[0] = 1 << (DIGITS - 1 - np.arange(DIGITS, dtype=np.uint64))  # identity matrix
    for dim, s, a, m in rows:
        if dim > d:
            break
        col = list(m)
        for k in range(s, DIGITS):
            # classic recurrence: m_k = 2 a_1 m_{k-1} ^ ... ^ 2^{s-1} a_{s-1} m_{k-s+1}
            #                           ^ 2^s m_{k-s} ^ m_{k-s}
            new = col[k - s] ^ (col[k - s] << s)
            for j in range(1, s):
                if (a >> (s - 1 - j)) & 1:
                    new ^= col[k - j] << j
            col.append(new)
        for k in range(DIGITS):
            v[dim - 1, k] = col[k] << (DIGITS - 1 - k)
    return v


def default_direction_numbers(d: int) -> np.ndarray:
    return load_direction_numbers(_data_path("sobol_joe_kuo_d20.txt"), d)


def identity_direction_numbers(d: int) -> np.ndarray:
    """Identity generator matrices in every dimension (pure van der Corput)."""
    col = (1 << (DIGITS - 1 - np.arange(DIGITS, dtype=np.uint64))).astype(np.uint64)
    return np.tile(col, (d, 1))


@dataclass(frozen=True)
class SobolGenerator:
    """Digitally shifted (optionally linearly scrambled) base-2 Sobol' sequence."""

    direction_numbers: np.ndarray     # (d, DIGITS) uint64 columns
    digital_shift: np.ndarray         # (d,) uint64, DIGITS-bit shifts
    scramble_seed: int | None = None  # present iff matrix scrambling applied

    def __post_init__(self):
        dn = np.ascontiguousarray(self.direction_numbers, dtype=np.uint64)
        if dn.ndim != 2 or dn.shape[1] != DIGITS:
            raise ValueError("direction_numbers must be (d, DIGITS)")
        if self.scramble_seed is None and not _upper_triangular_unit_diag(dn):
            # scrambled matrices stay nonsingular but lose triangularity
            raise ValueError("generator matrices must be upper triangular with unit diagonal")
        object.__setattr__(self, "direction_numbers", dn)
        shift = np.ascontiguousarray(self.digital_shift, dtype=np.uint64)
        if shift.shape != (dn.shape[0],) or (shift >> np.uint64(DIGITS)).any():
            raise ValueError("digital_shift must be d DIGITS-bit integers")
        object.__setattr__(self, "digital_shift", shift)

    @property
    def d(self) -> int:
        return self.direction_numbers.shape[0]

    @property
    def capacity(self) -> int:
        return 1 << DIGITS

    def points(self, start: int, stop: int) -> NodeSet:
        return sobol_points(self, start, stop)


def _upper_triangular_unit_diag(dn: np.ndarray) -> bool:
    """Column k must have its lowest set bit exactly at row k (bit DIGITS-1-k)."""
    if (dn >> np.uint64(DIGITS)).any():
        return False
    for k in range(DIGITS):
        diag = np.uint64(1) << np.uint64(DIGITS - 1 - k)
        col = dn[:, k]
        if ((col & diag) == 0).any() or (col % diag != 0).any():
            return False
    return True


def _net_integers(dn: np.ndarray, start: int, stop: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.uint64)
    z = np.zeros((stop - start, dn.shape[0]), dtype=np.uint64)
    bits = int(stop - 1).bit_length() if stop > 1 else 1
    for k in range(bits):
        mask = ((idx >> np.uint64(k)) & np.uint64(1)).astype(bool)
        if mask.any():
            z[mask] ^= dn[:, k][None, :]
    return z


def sobol_points(gen: SobolGenerator, start: int, stop: int) -> NodeSet:
    """Digitally shifted net points z_i xor shift mapped to [0,1) at 32 bits."""
    _check_range(start, stop, gen.capacity)
    z = _net_integers(gen.direction_numbers, start, stop)
    x = z ^ gen.digital_shift[None, :]
    return NodeSet(points=x.astype(np.float64) / _SCALE, family="sobol",
                   start=start, stop=stop, int_points=x)


def sobol_lag_integers(gen: SobolGenerator, start: int, stop: int) -> np.ndarray:
    """Integer lags x_i (-) x_1 = z_i of the first Gram column (shift cancels)."""
    _check_range(start, stop, gen.capacity)
    return _net_integers(gen.direction_numbers, start, stop)


def scramble_direction_numbers(dn: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Linear matrix scramble: left-multiply each generator matrix by a random
    nonsingular lower-triangular bit matrix with unit diagonal."""
    d = dn.shape[0]
    out = dn.copy()
    for ell in range(d):
        rand = rng.integers(0, 1 << DIGITS, size=DIGITS, dtype=np.uint64)
        cols = dn[ell]
        new = np.zeros_like(cols)
        for j in range(DIGITS):
            # row j of L: unit diagonal at bit DIGITS-1-j, random bits above it
            diag = np.uint64(1) << np.uint64(DIGITS - 1 - j)
            above = (~(np.uint64(2) * diag - np.uint64(1))) & np.uint64((1 << DIGITS) - 1)
            row = (rand[j] & above) | diag
            # bit j of L @ col = parity(row & col), all columns at once
            overlap = cols & row
            parity = np.zeros(DIGITS, dtype=np.uint64)
            for _ in range(DIGITS):
                parity ^= overlap & np.uint64(1)
                overlap = overlap >> np.uint64(1)
            new |= parity << np.uint64(DIGITS - 1 - j)
        out[ell] = new
    return out


def make_sobol(d: int, seed: int, scramble: bool = False,
               table_path: str | None = None) -> SobolGenerator:
    """Sobol' generator with shipped direction numbers, seeded digital shift,
    and optional linear matrix scrambling."""
    dn = load_direction_numbers(table_path, d) if table_path else default_direction_numbers(d)
    rng = np.random.Generator(np.random.Philox(seed))
    scramble_seed = None
    if scramble:
        scramble_seed = seed
        dn = scramble_direction_numbers(dn, rng)
    shift = rng.integers(0, 1 << DIGITS, size=d, dtype=np.uint64)
    return SobolGenerator(direction_numbers=dn, digital_shift=shift,
                          scramble_seed=scramble_seed)


def digit_subtract(x, y):
    """Coordinatewise base-2 digitwise subtraction (XOR of dyadic digits).

    Inputs must be exactly representable in DIGITS binary places.
    """
    xi = _to_digits(x)
    yi = _to_digits(y)
    return (xi ^ yi).astype(np.float64) / _SCALE


def _to_digits(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    scaled = arr * _SCALE
    ints = np.rint(scaled)
    if not np.array_equal(ints, scaled):
        raise ValueError(f"value not representable in {DIGITS} binary digits")
    return ints.astype(np.uint64)
