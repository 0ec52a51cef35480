"""Covariance kernels matched to the node families, their cancellation-free
ring form (kernel minus one), and shape-parameter derivatives.

All matched families are products over dimensions of factors 1 + eta_l * c_l
where c_l integrates to zero, so the kernel integrates to one and the Gram
matrix is n plus a rank-free "ring" part.  The ring column is assembled by the
iteration R <- R * (1 + c) + c, which never subtracts near-equal quantities.
The Matern kernel lives here only as the dense slow-path baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nodes import LatticeGenerator, SobolGenerator, lattice_lag_indices, sobol_lag_integers, _to_digits

ETA_MIN = 1e-8
ETA_MAX = 1e8

FAMILIES = ("bernoulli", "truncated_series", "exp_decay", "walsh1", "matern")


class SingularFactorError(ZeroDivisionError):
    """A per-dimension kernel factor vanished while forming a gradient."""


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, order, and shape vector.

    order is r for bernoulli (1 or 2) and truncated_series (> 1), q in (0,1)
    for exp_decay, fixed 1 for walsh1, and the Matern length scale theta.
    eta has one entry per dimension; shared_eta marks a single common value.
    """

    family: str
    order: float
    eta: np.ndarray
    shared_eta: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        eta = np.atleast_1d(np.asarray(self.eta, dtype=np.float64))
        if (eta <= 0).any():
            raise ValueError("eta must be positive")
        if self.family != "matern" and ((eta < ETA_MIN) | (eta > ETA_MAX)).any():
            raise ValueError(f"eta must lie in [{ETA_MIN}, {ETA_MAX}]")
        if self.shared_eta and not np.all(eta == eta[0]):
            raise ValueError("shared_eta requires identical components")
        object.__setattr__(self, "eta", eta)
        if self.family == "bernoulli" and self.order not in (1, 2):
            raise ValueError("bernoulli order must be 1 or 2 (use truncated_series otherwise)")
        if self.family == "truncated_series" and not self.order > 1:
            raise ValueError("truncated_series order must exceed 1")
        if self.family == "exp_decay" and not 0 < self.order < 1:
            raise ValueError("exp_decay order q must lie in (0, 1)")
        if self.family == "walsh1" and self.order != 1:
            raise ValueError("walsh1 has fixed order 1")

    @property
    def d(self) -> int:
        return self.eta.shape[0]

    def with_eta(self, eta) -> "KernelSpec":
        return KernelSpec(self.family, self.order, np.asarray(eta, dtype=np.float64),
                          self.shared_eta)

    def with_order(self, order: float) -> "KernelSpec":
        return KernelSpec(self.family, order, self.eta, self.shared_eta)


@dataclass(frozen=True)
class RingColumn:
    """First Gram column of the ring kernel C - 1, built without subtraction."""

    values: np.ndarray
    c_zero: float = 1.0


def bernoulli_poly(order: int, x):
    """B_2 and B_4 in closed form; other orders route to truncated_series."""
    x = np.asarray(x, dtype=np.float64)
    if order == 2:
        return x * x - x + 1.0 / 6.0
    if order == 4:
        x2 = x * x
        return x2 * x2 - 2.0 * x2 * x + x2 - 1.0 / 30.0
    raise ValueError(f"no closed form for Bernoulli order {order}")


def walsh_omega1(x):
    """Order-1 Walsh series kernel: 6 * (1/6 - 2^(floor(log2 x) - 1)), = 1 at 0."""
    x = np.asarray(x, dtype=np.float64)
    mant, expo = np.frexp(x)  # x = mant * 2^expo with mant in [0.5, 1)
    out = np.where(x > 0, 1.0 - 6.0 * np.exp2(expo - 2.0), 1.0)
    return out if out.ndim else float(out)


def truncated_series_spectrum(r: float, n: int) -> np.ndarray:
    """Analytic transform of the grid kernel: 0, n/m^r, aliased tail."""
    k = np.arange(n, dtype=np.float64)
    out = np.zeros(n)
    out[1 : n // 2] = n / k[1 : n // 2] ** r
    out[n // 2 :] = n / (n - k[n // 2 :]) ** r
    return out


def truncated_series_table(r: float, n: int) -> np.ndarray:
    """Grid values of the length-n truncated power series via one inverse FFT."""
    tab = np.fft.ifft(truncated_series_spectrum(r, n)).real
    if n > 1:
        # enforce the even symmetry table[k] == table[n-k] bit-exactly
        tab[1:] = 0.5 * (tab[1:] + tab[1:][::-1])
    return tab


def _exp_decay_base(q: float, delta):
    c = np.cos(2.0 * np.pi * np.asarray(delta, dtype=np.float64))
    return 2.0 * q * (c - q) / (q * q - 2.0 * q * c + 1.0)


def _dim_bases_from_lags(spec: KernelSpec, lag: np.ndarray) -> np.ndarray:
    """Per-dimension base values c_l at real-valued lags in [0, 1)."""
    if spec.family == "bernoulli":
        # fold to [0, 1/2]: the even polynomial is then computed identically
        # for both orderings of a pair, making Gram symmetry exact
        folded = np.minimum(lag, 1.0 - lag)
        sign = 1.0 if spec.order == 1 else -1.0
        return sign * bernoulli_poly(int(2 * spec.order), folded)
    if spec.family == "exp_decay":
        return _exp_decay_base(spec.order, np.minimum(lag, 1.0 - lag))
    if spec.family == "walsh1":
        return walsh_omega1(lag)
    raise ValueError(f"{spec.family} has no pointwise lag form")


try:  # hot inner loops of every objective evaluation; numpy fallbacks below
    from numba import njit as _njit

    @_njit(cache=True)
    def _ring_rows(eta, bases, out):  # pragma: no cover - jitted
        n, d = bases.shape
        for i in range(n):
            r = eta[0] * bases[i, 0]
            for ell in range(1, d):
                c = eta[ell] * bases[i, ell]
                r = r * (1.0 + c) + c
            out[i] = r

    @_njit(cache=True)
    def _bernoulli_bases(brev, hvec, mask, inv, sign, order4, out):  # pragma: no cover
        n = brev.shape[0]
        d = hvec.shape[0]
        for i in range(n):
            b = brev[i]
            for ell in range(d):
                x = np.float64((hvec[ell] * b) & mask) * inv
                if x > 0.5:
                    x = 1.0 - x
                if order4:
                    x2 = x * x
                    val = x2 * x2 - 2.0 * x2 * x + x2 - 1.0 / 30.0
                else:
                    val = x * x - x + 1.0 / 6.0
                out[i, ell] = sign * val

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def ring_from_bases(eta: np.ndarray, bases: np.ndarray) -> np.ndarray:
    """C - 1 over the last axis of (..., d) bases via the product iteration."""
    eta = np.asarray(eta, dtype=np.float64)
    if _HAVE_NUMBA and bases.ndim == 2 and bases.flags.c_contiguous \
            and bases.size >= 1 << 14:
        out = np.empty(bases.shape[0])
        _ring_rows(eta, bases, out)
        return out
    ring = eta[0] * bases[..., 0]
    for ell in range(1, bases.shape[-1]):
        c = eta[ell] * bases[..., ell]
        ring = ring * (1.0 + c) + c
    return ring


def shift_invariant_ring(spec: KernelSpec, lag) -> float | np.ndarray:
    """Ring value of a product kernel at a lag point (or batch of lags)."""
    lag = np.asarray(lag, dtype=np.float64)
    scalar = lag.ndim == 1
    bases = _dim_bases_from_lags(spec, np.atleast_2d(lag))
    ring = ring_from_bases(spec.eta, bases)
    return float(ring[0]) if scalar else ring


def exp_decay_kernel(spec: KernelSpec, x, t) -> float | np.ndarray:
    """Full kernel value 1 + ring for the exponential-decay family."""
    if spec.family != "exp_decay":
        raise ValueError("spec must be exp_decay")
    delta = (np.asarray(x, dtype=np.float64) - np.asarray(t, dtype=np.float64)) % 1.0
    ring = shift_invariant_ring(spec, delta)
    return 1.0 + ring


def walsh_ring(spec: KernelSpec, x, t) -> float | np.ndarray:
    """Ring value of the Walsh kernel at digitwise lag x (-) t."""
    if spec.family != "walsh1":
        raise ValueError("spec must be walsh1")
    lag = (_to_digits(x) ^ _to_digits(t)).astype(np.float64) / 2.0**32
    return shift_invariant_ring(spec, lag)


def matern_kernel(theta: float, x, t) -> float | np.ndarray:
    """prod_l exp(-theta |x_l - t_l|) (1 + theta |x_l - t_l|)."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    delta = np.abs(np.asarray(x, dtype=np.float64) - np.asarray(t, dtype=np.float64))
    vals = np.exp(-theta * delta) * (1.0 + theta * delta)
    return vals.prod(axis=-1)


def kernel_eta_gradient(spec: KernelSpec, x, t) -> np.ndarray:
    """Analytic shape-parameter partials of a product kernel at (x, t).

    Shared eta returns the single derivative d/d eta; per-dimension eta
    returns one partial per dimension.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if spec.family == "walsh1":
        lag = (_to_digits(x) ^ _to_digits(t)).astype(np.float64) / 2.0**32
    else:
        lag = (x - t) % 1.0
    bases = _dim_bases_from_lags(spec, lag[None, :])[0]
    factors = 1.0 + spec.eta * bases
    if (factors == 0.0).any():
        raise SingularFactorError("per-dimension kernel factor is zero")
    kernel = factors.prod()
    if spec.shared_eta:
        eta = spec.eta[0]
        d = spec.d
        val = (d / eta) * kernel * (1.0 - np.mean(1.0 / factors))
        return np.array([val])
    return kernel * bases / factors


# ---------------------------------------------------------------------------
# Fast-path column machinery
# ---------------------------------------------------------------------------

def lattice_column_bases(spec: KernelSpec, gen: LatticeGenerator, m: int) -> np.ndarray:
    """(n, d) per-dimension base values at the first-column lags of a lattice."""
    n = 1 << m
    if spec.family == "bernoulli" and _HAVE_NUMBA and (n * spec.d) >= 1 << 14:
        from .nodes import _brev_table

        out = np.empty((n, spec.d))
        _bernoulli_bases(_brev_table(m),
                         np.asarray(gen.generating_vector, dtype=np.uint64),
                         np.uint64(n - 1), 1.0 / n,
                         1.0 if spec.order == 1 else -1.0,
                         spec.order == 2, out)
        return out
    idx = lattice_lag_indices(gen, m)
    if spec.family == "truncated_series":
        table = truncated_series_table(spec.order, n)
        return table[idx]
    return _dim_bases_from_lags(spec, idx.astype(np.float64) / n)


def sobol_column_bases(spec: KernelSpec, gen: SobolGenerator, m: int) -> np.ndarray:
    """(n, d) Walsh base values at the digitwise first-column lags."""
    if spec.family != "walsh1":
        raise ValueError("Sobol' path requires the walsh1 kernel")
    lags = sobol_lag_integers(gen, 0, 1 << m).astype(np.float64) / 2.0**32
    return walsh_omega1(lags)


def ring_column(spec: KernelSpec, gen, m: int) -> RingColumn:
    if isinstance(gen, LatticeGenerator):
        bases = lattice_column_bases(spec, gen, m)
    elif isinstance(gen, SobolGenerator):
        bases = sobol_column_bases(spec, gen, m)
    else:
        raise TypeError(f"unsupported generator {type(gen)!r}")
    return RingColumn(values=ring_from_bases(spec.eta, bases))


def truncated_series_first_column(spec: KernelSpec, gen: LatticeGenerator, m: int) -> RingColumn:
    """Spec'd entry point for the continuous-order kernel column."""
    if spec.family != "truncated_series":
        raise ValueError("spec must be truncated_series")
    return RingColumn(values=ring_from_bases(spec.eta, lattice_column_bases(spec, gen, m)))


def column_eta_jacobian(spec: KernelSpec, bases: np.ndarray,
                        ring: np.ndarray) -> np.ndarray:
    """Derivative first columns dC1/d eta, shape (p, n); p = 1 if shared."""
    factors = 1.0 + spec.eta[None, :] * bases
    if (factors == 0.0).any():
        raise SingularFactorError("per-dimension kernel factor is zero")
    kernel = 1.0 + ring
    if spec.shared_eta:
        return (kernel * (bases / factors).sum(axis=1))[None, :]
    return (kernel[:, None] * bases / factors).T


# ---------------------------------------------------------------------------
# Dense Gram matrices (Matern path and test oracles)
# ---------------------------------------------------------------------------

def gram_matrix(spec: KernelSpec, nodes, gen=None, m: int | None = None) -> np.ndarray:
    """Dense Gram matrix for any family, O(n^2 d); oracle and Matern use only.

    truncated_series needs (gen, m) because it is defined on the lattice grid.
    """
    if spec.family == "matern":
        pts = np.asarray(nodes, dtype=np.float64)
        delta = np.abs(pts[:, None, :] - pts[None, :, :])
        theta = spec.eta[:, None, None].T  # per-dim theta allowed
        return (np.exp(-theta * delta) * (1.0 + theta * delta)).prod(axis=-1)
    if spec.family == "truncated_series":
        if gen is None or m is None:
            raise ValueError("truncated_series Gram needs the lattice generator and m")
        n = 1 << m
        table = truncated_series_table(spec.order, n)
        idx = lattice_lag_indices(gen, m)
        lag_idx = (idx[:, None, :] - idx[None, :, :]) % np.uint64(n)
        bases = table[lag_idx]
    elif spec.family == "walsh1":
        ints = np.asarray(nodes, dtype=np.uint64)
        lags = (ints[:, None, :] ^ ints[None, :, :]).astype(np.float64) / 2.0**32
        bases = walsh_omega1(lags)
    else:
        pts = np.asarray(nodes, dtype=np.float64)
        delta = (pts[:, None, :] - pts[None, :, :]) % 1.0
        bases = _dim_bases_from_lags(spec, delta)
    return 1.0 + ring_from_bases(spec.eta, bases)
