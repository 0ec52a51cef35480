"""Hyperparameter objectives, the eigenvalue pipeline, credible-interval
widths, and the dense slow-path posterior.

The fast formulas work entirely in transform space: with spectrum y~ of the
data and eigenvalues lam_1 = n + ring_lam_1, lam_2..lam_n of the Gram matrix,

    EB loss   log(sum_{i>=2} |y~_i|^2 / lam_i) + (1/n) sum_i log lam_i
    GCV loss  log(sum_{i>=2} |y~_i|^2 / lam_i^2) - 2 log(sum_i 1 / lam_i)

and the interval half-widths use ring_lam_1 directly so that no 1 - n/lam_1
subtraction ever happens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import stdtrit

from .transforms import _brev_indices, fbt, fbt_lattice_even

EB, FULL, GCV = "eb", "full", "gcv"
CRITERIA = (EB, FULL, GCV)
QUANTILE_99 = 2.58  # central 99% normal quantile, used verbatim for EB/GCV

CLAMP_NEG = 1e-8   # eigenvalues in [-CLAMP_NEG*n, 0) are round-off: clamp
CLAMP_SUB = 1e-12  # replacement value, times n


class NonPositiveDefiniteError(ArithmeticError):
    pass


class DegenerateDataError(ValueError):
    """All transformed data beyond the constant mode vanished."""


@dataclass
class TransformedData:
    """Spectrum of the integrand values plus the Gram eigenvalue pieces."""

    y_tilde: np.ndarray       # length n, complex for lattice data
    lam_ring1: float          # eigenvalue of C - 1 against the ones vector
    lams_rest: np.ndarray     # lam_2 .. lam_n, real positive
    n: int
    n_clamped: int = 0
    weights: np.ndarray | None = None  # |y_tilde[1:]|^2, cached across searches

    @property
    def lam1(self) -> float:
        return self.n + self.lam_ring1

    def data_sums(self) -> tuple[float, float]:
        w = self.weights
        if w is None:
            w = np.abs(self.y_tilde[1:]) ** 2
        over = w / self.lams_rest
        return float(over.sum()), float((over / self.lams_rest).sum())


def _clamp_eigs(vals: np.ndarray, n: int, what: str) -> tuple[np.ndarray, int]:
    floor = -CLAMP_NEG * n
    bad = vals < floor
    if bad.any():
        raise NonPositiveDefiniteError(
            f"{what}: eigenvalue {vals[bad].min():.3e} below round-off floor {floor:.3e}"
        )
    clamp = vals <= 0
    if clamp.any():
        vals = np.where(clamp, CLAMP_SUB * n, vals)
    return vals, int(clamp.sum())


def _column_is_even(col: np.ndarray, m: int) -> bool:
    g = col[_brev_indices(m)]
    return bool(np.array_equal(g[1:], g[:0:-1]))


def eigenvalues_from_ring_column(col_values: np.ndarray, kind: str,
                                 spec_label: str = "kernel",
                                 known_even: bool | None = None) -> tuple[float, np.ndarray, int]:
    """Transform the ring first column into (ring_lam_1, lam_2..lam_n).

    The rank-one ones-block of the full Gram matrix contributes only to the
    first eigenvalue, so the remaining spectrum entries already equal the
    eigenvalues of the full matrix.  known_even=True skips the evenness probe
    for lattice columns a caller built from folded lags.
    """
    n = col_values.shape[0]
    if known_even is None:
        known_even = kind == "lattice" and _column_is_even(col_values,
                                                           n.bit_length() - 1)
    if kind == "lattice" and known_even:
        coeffs = fbt_lattice_even(col_values)
    else:
        coeffs = fbt(col_values, kind).coefficients
        if np.iscomplexobj(coeffs):
            imag_scale = np.abs(coeffs.imag).max()
            if imag_scale > 1e-8 * max(np.abs(coeffs.real).max(), 1.0):
                raise NonPositiveDefiniteError(
                    f"{spec_label}: transform of the kernel column is not real "
                    f"(max imag {imag_scale:.3e})"
                )
            coeffs = np.ascontiguousarray(coeffs.real)
        else:
            coeffs = coeffs.copy()
    ring1, c1 = _clamp_eigs(coeffs[:1], n, spec_label)
    rest, c2 = _clamp_eigs(coeffs[1:], n, spec_label)
    return float(ring1[0]), rest, c1 + c2


def transformed_data(y_spectrum: np.ndarray, col_values: np.ndarray, kind: str,
                     spec_label: str = "kernel",
                     weights: np.ndarray | None = None,
                     known_even: bool | None = None) -> TransformedData:
    ring1, rest, nclamp = eigenvalues_from_ring_column(col_values, kind, spec_label,
                                                       known_even=known_even)
    return TransformedData(y_tilde=y_spectrum, lam_ring1=ring1, lams_rest=rest,
                           n=y_spectrum.shape[0], n_clamped=nclamp, weights=weights)


def _require_data(td: TransformedData) -> tuple[float, float]:
    s1, s2 = td.data_sums()
    if s1 <= 0.0:
        raise DegenerateDataError("all spectrum mass sits in the constant mode")
    return s1, s2


def objective_eb(td: TransformedData) -> float:
    s1, _ = _require_data(td)
    log_lams = np.log(td.lams_rest).sum() + np.log(td.lam1)
    return float(np.log(s1) + log_lams / td.n)


def objective_gcv(td: TransformedData) -> float:
    _, s2 = _require_data(td)
    inv_sum = (1.0 / td.lams_rest).sum() + 1.0 / td.lam1
    return float(np.log(s2) - 2.0 * np.log(inv_sum))


def objective(kind: str, td: TransformedData) -> float:
    # the full-Bayes criterion reuses the EB estimate of the shape parameters
    return objective_gcv(td) if kind == GCV else objective_eb(td)


def objective_gradient(td: TransformedData, kind: str, dlambda: np.ndarray) -> np.ndarray:
    """Gradient of the EB/GCV loss given eigenvalue derivatives (p, n)."""
    dlambda = np.atleast_2d(np.asarray(dlambda, dtype=np.float64))
    if dlambda.shape[1] != td.n:
        raise ValueError("eigenvalue derivative length mismatch")
    lams = np.concatenate([[td.lam1], td.lams_rest])
    w = np.abs(td.y_tilde[1:]) ** 2
    s1, s2 = _require_data(td)
    if kind == GCV:
        s3 = float(np.sum(w / td.lams_rest**3))
        inv_sum = float((1.0 / lams).sum())
        grad = (-2.0 / s2) * (dlambda[:, 1:] * (w / td.lams_rest**3)).sum(axis=1) \
            + (2.0 / inv_sum) * (dlambda / lams[None, :] ** 2).sum(axis=1)
        return grad
    grad = (dlambda / lams[None, :]).sum(axis=1) / td.n \
        - (dlambda[:, 1:] * (w / td.lams_rest**2)).sum(axis=1) / s1
    return grad


def student_t_quantile(dof: int, p: float = 0.995) -> float:
    """Student-t inverse CDF (regularized incomplete-beta inversion)."""
    if dof < 1:
        raise ValueError("degrees of freedom must be at least 1")
    return float(stdtrit(dof, p))


def credible_width(kind: str, td: TransformedData) -> float:
    """Credible-interval half-width in the cancellation-safe form."""
    if td.lam_ring1 < 0:
        raise NonPositiveDefiniteError("ring eigenvalue negative after clamping")
    s1, s2 = td.data_sums()
    if s1 <= 0.0:
        return 0.0
    if kind == EB:
        return QUANTILE_99 / td.n * np.sqrt(td.lam_ring1 / td.lam1 * s1)
    if kind == FULL:
        t = student_t_quantile(td.n - 1)
        return t / td.n * np.sqrt(td.lam_ring1 / (td.n - 1) * s1)
    if kind == GCV:
        mean_inv = ((1.0 / td.lams_rest).sum() + 1.0 / td.lam1) / td.n
        return QUANTILE_99 / td.n * np.sqrt(td.lam_ring1 / td.lam1 * s2 / mean_inv)
    raise ValueError(f"unknown criterion {kind!r}")


# ---------------------------------------------------------------------------
# Dense slow path (Theorem-style formulas with general c vector and c0)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensePosterior:
    mu_hat: float
    err: float
    m: float
    s2: float


def _chol_extended(a: np.ndarray) -> np.ndarray:
    """Plain Cholesky in 80-bit floats; the double-precision factorization of
    c0 - c' C^-1 c loses too many digits when n/lambda_1 approaches one."""
    a = np.asarray(a, dtype=np.longdouble)
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        s = a[j, j] - (low[j, :j] ** 2).sum()
        if s <= 0:
            raise NonPositiveDefiniteError("extended Cholesky hit a nonpositive pivot")
        low[j, j] = np.sqrt(s)
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def _solve_extended(low: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = low.shape[0]
    z = np.asarray(b, dtype=np.longdouble).copy()
    for j in range(n):
        z[j] = (z[j] - low[j, :j] @ z[:j]) / low[j, j]
    for j in range(n - 1, -1, -1):
        z[j] = (z[j] - low[j + 1:, j] @ z[j + 1:]) / low[j, j]
    return z


def dense_posterior(y: np.ndarray, gram: np.ndarray, c: np.ndarray, c0: float,
                    kind: str, extended: bool = False) -> DensePosterior:
    """Full O(n^3) posterior: mean estimate, width, and scale for a criterion.

    extended=True runs the linear algebra in 80-bit floats (n <= 512), which
    the oracle comparisons need because c0 - c' C^-1 c cancels severely for
    smooth kernels.
    """
    n = np.asarray(y).shape[0]
    if n > 4096:
        raise ValueError("dense path guarded to n <= 4096")
    if extended:
        if n > 512:
            raise ValueError("extended-precision dense path guarded to n <= 512")
        dtype = np.longdouble
        low = _chol_extended(gram)
        solve = lambda rhs: _solve_extended(low, rhs)
        diag = np.diag(low)
    else:
        dtype = np.float64
        try:
            chol = cho_factor(np.asarray(gram, dtype=np.float64), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveDefiniteError(f"dense Gram not positive definite: {exc}")
        solve = lambda rhs: cho_solve(chol, rhs)
        diag = np.diag(chol[0])
    y = np.asarray(y, dtype=dtype)
    c = np.asarray(c, dtype=dtype)
    ones = np.ones(n, dtype=dtype)

    a = solve(y)     # C^-1 y
    b = solve(ones)
    e = solve(c)
    dd = b.sum()     # 1' C^-1 1
    one_a = a.sum()
    m_eb = one_a / dd
    quad = y @ a - one_a**2 / dd
    resid_var = c0 - c @ e
    mu_eb = (1.0 - e.sum()) * one_a / dd + c @ a

    if kind in (EB, FULL):
        s2_eb = quad / n
        if kind == EB:
            return DensePosterior(float(mu_eb),
                                  float(QUANTILE_99 * np.sqrt(max(s2_eb * resid_var, 0.0))),
                                  float(m_eb), float(s2_eb))
        sig2 = quad / (n - 1) * ((1.0 - c @ b) ** 2 / dd + resid_var)
        t = student_t_quantile(n - 1)
        return DensePosterior(float(mu_eb), float(t * np.sqrt(max(sig2, 0.0))),
                              float(m_eb), float(sig2))

    if kind == GCV:
        a2 = solve(a)   # C^-2 y
        b2 = solve(b)
        dd2 = b2.sum()
        one_a2 = a2.sum()
        m_gcv = one_a2 / dd2
        quad2 = y @ a2 - one_a2**2 / dd2
        if extended:
            inv_l = _forward_identity(low)
        else:
            inv_l = solve_triangular(chol[0], np.eye(n), lower=True)
        trace_inv = (inv_l**2).sum()
        s2_gcv = quad2 / trace_inv
        mu_gcv = (1.0 - e.sum()) * (b @ a) / dd2 + c @ a
        return DensePosterior(float(mu_gcv),
                              float(QUANTILE_99 * np.sqrt(max(s2_gcv * resid_var, 0.0))),
                              float(m_gcv), float(s2_gcv))
    raise ValueError(f"unknown criterion {kind!r}")


def _forward_identity(low: np.ndarray) -> np.ndarray:
    n = low.shape[0]
    out = np.eye(n, dtype=np.longdouble)
    for j in range(n):
        out[j] = (out[j] - low[j, :j] @ out[:j]) / low[j, j]
    return out


def dense_eb_objective(y: np.ndarray, gram: np.ndarray) -> float:
    """log quad + (1/n) log det, the dense counterpart of the fast EB loss."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    chol = cho_factor(np.asarray(gram, dtype=np.float64), lower=True)
    a = cho_solve(chol, y)
    b = cho_solve(chol, np.ones(n))
    quad = float(y @ a) - float(a.sum()) ** 2 / float(b.sum())
    logdet = 2.0 * np.log(np.diag(chol[0])).sum()
    return float(np.log(max(quad, 1e-300)) + logdet / n)


# ---------------------------------------------------------------------------
# Hyperparameter search over unconstrained coordinates
# ---------------------------------------------------------------------------

_LOG_ETA_MIN, _LOG_ETA_MAX = np.log(1e-8), np.log(1e8)


@dataclass(frozen=True)
class HyperparameterState:
    """Unconstrained coordinates plus the map tag for each component."""

    t: np.ndarray
    tags: tuple[str, ...]  # "eta" | "order_r" | "order_q"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape != (len(self.tags),):
            raise ValueError("coordinate/tag length mismatch")
        object.__setattr__(self, "t", t)

    def constrained(self) -> np.ndarray:
        out = np.empty_like(self.t)
        for i, tag in enumerate(self.tags):
            if tag == "eta":
                # clip twice: exp(log(bound)) can round past the bound
                out[i] = np.clip(np.exp(np.clip(self.t[i], _LOG_ETA_MIN,
                                                _LOG_ETA_MAX)), 1e-8, 1e8)
            elif tag == "order_r":
                out[i] = 1.0 + np.exp(self.t[i])
            elif tag == "order_q":
                out[i] = 1.0 / (1.0 + np.exp(self.t[i]))
            else:
                raise ValueError(f"unknown tag {tag!r}")
        return out

    @staticmethod
    def from_constrained(values, tags) -> "HyperparameterState":
        t = np.empty(len(tags))
        for i, (v, tag) in enumerate(zip(values, tags)):
            if tag == "eta":
                t[i] = np.log(v)
            elif tag == "order_r":
                t[i] = np.log(v - 1.0)
            elif tag == "order_q":
                t[i] = np.log(1.0 / v - 1.0)
            else:
                raise ValueError(f"unknown tag {tag!r}")
        return HyperparameterState(t=t, tags=tuple(tags))


@dataclass
class SearchResult:
    state: HyperparameterState
    value: float
    evaluations: int
    payload: object = None  # best-seen auxiliary data from the objective


def search_hyperparameters(objective_fn, init: HyperparameterState,
                           method: str = "nelder_mead", budget: int = 100,
                           step: float = 0.25, gradient_fn=None) -> SearchResult:
    """Minimize over unconstrained coordinates; returns the best state seen.

    objective_fn(t_vector) -> (value, payload).  Non-finite values during the
    search are treated as rejected steps; a non-finite value at the initial
    point is an error.
    """
    best = {"val": np.inf, "t": init.t.copy(), "payload": None, "count": 0}

    def wrapped(t):
        best["count"] += 1
        try:
            val, payload = objective_fn(t)
        except (NonPositiveDefiniteError, FloatingPointError):
            return np.inf
        if np.isfinite(val) and val < best["val"]:
            best.update(val=val, t=np.asarray(t, dtype=np.float64).copy(), payload=payload)
        return val if np.isfinite(val) else np.inf

    v0 = wrapped(init.t)
    if not np.isfinite(v0):
        raise ValueError("objective not finite at the initial hyperparameters")

    if budget > 1 and method == "nelder_mead":
        minimize(wrapped, init.t, method="Nelder-Mead",
                 options={"maxfev": budget - 1, "xatol": 1e-4, "fatol": 1e-7,
                          "initial_simplex": _initial_simplex(init.t, step)})
    elif budget > 1 and method == "grad_descent":
        if gradient_fn is None:
            raise ValueError("grad_descent needs a gradient function")
        _gradient_descent(wrapped, gradient_fn, init.t, budget - 1, step)
    elif method not in ("nelder_mead", "grad_descent"):
        raise ValueError(f"unknown search method {method!r}")

    return SearchResult(state=HyperparameterState(best["t"], init.tags),
                        value=best["val"], evaluations=best["count"],
                        payload=best["payload"])


def _initial_simplex(t0: np.ndarray, step: float) -> np.ndarray:
    p = t0.shape[0]
    simplex = np.tile(t0, (p + 1, 1))
    for i in range(p):
        simplex[i + 1, i] += step if t0[i] <= 0 else -step
    return simplex


def _gradient_descent(wrapped, gradient_fn, t0, budget, nu):
    """Fixed-step descent with 20-step backtracking halving on rejection."""
    t = np.asarray(t0, dtype=np.float64).copy()
    current = wrapped(t)
    used = 1
    while used < budget:
        g = gradient_fn(t)
        if not np.all(np.isfinite(g)):
            break
        step = nu
        for _ in range(20):
            if used >= budget:
                return
            cand = t - step * g
            val = wrapped(cand)
            used += 1
            if np.isfinite(val) and val < current:
                t, current = cand, val
                break
            step *= 0.5
        else:
            break
