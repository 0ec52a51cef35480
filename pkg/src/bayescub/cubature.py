"""Automatic cubature loops: the fast doubling algorithm over matched
(node set, kernel) pairs, the generic dense loop for the Matern baseline,
and a plain Monte Carlo comparison baseline.

Per iteration only the new block of nodes is generated and evaluated; the
running data transform is extended by the doubling update, the shape
parameters are re-optimized from a warm start, and sampling stops as soon as
the credible half-width drops to the tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels, problems
from .inference import (EB, CRITERIA, DegenerateDataError, HyperparameterState,
                        TransformedData, credible_width, dense_eb_objective,
                        dense_posterior, objective, search_hyperparameters,
                        transformed_data)
from .nodes import make_lattice, make_sobol
from .transforms import fbt, fbt_double


class IntegrandError(ValueError):
    """The integrand returned a non-finite value."""


@dataclass(frozen=True)
class OptimizerSettings:
    method: str = "nelder_mead"
    budget_first: int = 100
    budget_later: int = 20
    step: float = 0.5
    search_order: bool = False


@dataclass(frozen=True)
class CubatureConfig:
    family: str = "lattice"          # lattice | sobol | matern_dense
    criterion: str = EB
    epsilon: float = 1e-2
    n0: int = 2**8
    n_max: int = 2**20
    seed: int = 0
    periodizer: str = "none"
    eta_mode: str = "shared"         # shared | per_dimension
    kernel: str | None = None        # default: bernoulli (lattice) / walsh1 (sobol)
    order: float | None = None       # default: 2 (bernoulli) / 1 (walsh1)
    scramble: bool = False
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if self.family not in ("lattice", "sobol", "matern_dense"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for name in ("n0", "n_max"):
            v = getattr(self, name)
            if v < 2 or v & (v - 1):
                raise ValueError(f"{name} must be a power of 2, got {v}")
        if self.n0 > self.n_max:
            raise ValueError("n0 must not exceed n_max")
        if self.eta_mode not in ("shared", "per_dimension"):
            raise ValueError(f"unknown eta_mode {self.eta_mode!r}")


@dataclass(frozen=True)
class IterationRecord:
    n: int
    theta: tuple[float, ...]
    err: float
    seconds: float


@dataclass
class CubatureResult:
    mu_hat: float
    n_used: int
    err: float
    tolerance_met: bool
    iterations: list[IterationRecord]
    seed: int
    seconds: float
    final_state: TransformedData | None = None

    def to_record(self) -> dict:
        return {
            "mu_hat": self.mu_hat,
            "n": self.n_used,
            "err": self.err,
            "tolerance_met": self.tolerance_met,
            "seconds": float(f"{self.seconds:.3g}"),
            "seed": self.seed,
        }


def _default_kernel(config: CubatureConfig, d: int) -> kernels.KernelSpec:
    family = config.kernel or {"lattice": "bernoulli", "sobol": "walsh1",
                               "matern_dense": "matern"}[config.family]
    order = config.order
    if order is None:
        order = {"bernoulli": 2.0, "truncated_series": 2.0, "exp_decay": 0.5,
                 "walsh1": 1.0, "matern": 1.0}[family]
    eta0 = order if family == "matern" else 1.0
    return kernels.KernelSpec(family=family, order=float(order),
                              eta=np.full(d, eta0),
                              shared_eta=config.eta_mode == "shared")


def _check_finite(y: np.ndarray, start: int) -> None:
    bad = ~np.isfinite(y)
    if bad.any():
        idx = start + int(np.argmax(bad))
        raise IntegrandError(f"integrand returned a non-finite value at node index {idx}")


def _is_degenerate(y: np.ndarray) -> bool:
    return float(np.ptp(y)) <= 1e-14 * max(1.0, float(np.abs(y).max()))


def _search_tags(spec: kernels.KernelSpec, config: CubatureConfig, d: int) -> tuple[str, ...]:
    tags: list[str] = []
    if config.optimizer.search_order:
        if spec.family == "truncated_series":
            tags.append("order_r")
        elif spec.family == "exp_decay":
            tags.append("order_q")
    tags.extend(["eta"] * (1 if config.eta_mode == "shared" else d))
    return tuple(tags)


def _spec_from_state(spec0: kernels.KernelSpec, state: HyperparameterState,
                     d: int) -> kernels.KernelSpec:
    vals = state.constrained()
    spec = spec0
    i = 0
    if state.tags and state.tags[0] in ("order_r", "order_q"):
        spec = spec.with_order(float(vals[0]))
        i = 1
    eta = vals[i:]
    if eta.shape[0] == 1:
        eta = np.full(d, eta[0])
    return spec.with_eta(eta)


def integrate_fast(f, d: int, config: CubatureConfig) -> CubatureResult:
    """Doubling Bayesian cubature with O(n log n) per-iteration cost."""
    if config.family not in ("lattice", "sobol"):
        raise ValueError("integrate_fast requires the lattice or sobol family")
    t_start = time.perf_counter()
    if config.family == "lattice":
        gen = make_lattice(d, config.seed)
    else:
        gen = make_sobol(d, config.seed, scramble=config.scramble)
    kind = config.family
    f_eval = problems.periodize(f, config.periodizer)
    spec0 = _default_kernel(config, d)
    tags = _search_tags(spec0, config, d)
    order_searched = bool(tags and tags[0] != "eta")
    warm = HyperparameterState.from_constrained(
        ([spec0.order] if order_searched else []) + [1.0] * (len(tags) - order_searched),
        tags)

    y_all = np.empty(0)
    spectrum = None
    iterations: list[IterationRecord] = []
    err = np.inf
    td: TransformedData | None = None
    n_prev, n = 0, config.n0
    budget = config.optimizer.budget_first

    while n <= config.n_max:
        it_start = time.perf_counter()
        block = gen.points(n_prev, n)
        yb = np.asarray(f_eval(block.points), dtype=np.float64)
        _check_finite(yb, n_prev)
        spectrum = fbt(yb, kind) if spectrum is None else fbt_double(spectrum, yb)
        y_all = np.concatenate([y_all, yb])
        m = n.bit_length() - 1

        if _is_degenerate(y_all):
            err, td = 0.0, None
            iterations.append(IterationRecord(n, tuple(spec0.eta), 0.0,
                                              time.perf_counter() - it_start))
            break

        bases = None
        if not order_searched:
            bases = _column_bases(spec0, gen, m, kind)
        weights = np.abs(spectrum.coefficients[1:]) ** 2

        def obj(t):
            state = HyperparameterState(t, tags)
            spec = _spec_from_state(spec0, state, d)
            b = bases if bases is not None else _column_bases(spec, gen, m, kind)
            col = kernels.ring_from_bases(spec.eta, b)
            # lattice columns come from folded lags, hence are exactly even
            data = transformed_data(spectrum.coefficients, col, kind,
                                    spec_label=f"{spec.family}(r={spec.order:g})",
                                    weights=weights,
                                    known_even=True if kind == "lattice" else None)
            try:
                return objective(config.criterion, data), (spec, data)
            except DegenerateDataError:
                return np.inf, (spec, data)

        grad_fn = None
        if config.optimizer.method == "grad_descent" and not order_searched:
            grad_fn = _make_gradient(spec0, tags, d, bases, spectrum, kind, config)

        res = search_hyperparameters(obj, warm, method=config.optimizer.method,
                                     budget=budget, step=config.optimizer.step,
                                     gradient_fn=grad_fn)
        warm = res.state
        budget = config.optimizer.budget_later
        spec_best, td = res.payload
        err = credible_width(config.criterion, td)
        iterations.append(IterationRecord(n, tuple(spec_best.eta), float(err),
                                          time.perf_counter() - it_start))
        if err <= config.epsilon:
            break
        n_prev, n = n, 2 * n

    n_used = len(y_all)
    return CubatureResult(mu_hat=float(y_all.mean()), n_used=n_used, err=float(err),
                          tolerance_met=bool(err <= config.epsilon),
                          iterations=iterations, seed=config.seed,
                          seconds=time.perf_counter() - t_start, final_state=td)


def _column_bases(spec, gen, m, kind):
    if kind == "lattice":
        return kernels.lattice_column_bases(spec, gen, m)
    return kernels.sobol_column_bases(spec, gen, m)


def _make_gradient(spec0, tags, d, bases, spectrum, kind, config):
    from .inference import objective_gradient

    def gradient(t):
        state = HyperparameterState(t, tags)
        spec = _spec_from_state(spec0, state, d)
        col = kernels.ring_from_bases(spec.eta, bases)
        data = transformed_data(spectrum.coefficients, col, kind)
        jac = kernels.column_eta_jacobian(spec, bases, col)
        dlam = np.vstack([np.real(fbt(row, kind).coefficients) for row in jac])
        kind_obj = "gcv" if config.criterion == "gcv" else "eb"
        g_eta = objective_gradient(data, kind_obj, dlam)
        # chain rule through eta = exp(t)
        eta = spec.eta if len(g_eta) > 1 else spec.eta[:1]
        return g_eta * eta

    return gradient


# ---------------------------------------------------------------------------
# Dense slow path (Matern baseline) and plain Monte Carlo
# ---------------------------------------------------------------------------

def _matern_c_vector(theta: float, pts: np.ndarray) -> np.ndarray:
    def antideriv(a):
        return 2.0 / theta - np.exp(-theta * a) * (a + 2.0 / theta)

    return (antideriv(pts) + antideriv(1.0 - pts)).prod(axis=1)


def _matern_c0(theta: float, d: int) -> float:
    one_dim = 4.0 / theta - 2.0 * (3.0 - np.exp(-theta) * (3.0 + theta)) / theta**2
    return float(one_dim**d)


def integrate_dense(f, d: int, config: CubatureConfig,
                    theta_grid=None) -> CubatureResult:
    """Generic-kernel doubling loop with O(N_opt n^3) dense linear algebra."""
    if config.family != "matern_dense":
        raise ValueError("integrate_dense requires the matern_dense family")
    if config.n_max > 4096:
        raise ValueError("dense path guarded to n_max <= 2^12")
    t_start = time.perf_counter()
    gen = make_sobol(d, config.seed, scramble=True)
    f_eval = problems.periodize(f, config.periodizer)
    if theta_grid is None:
        theta_grid = np.geomspace(0.5, 64.0, 12)

    y_all = np.empty(0)
    pts_all = np.empty((0, d))
    iterations: list[IterationRecord] = []
    err, post, best_theta = np.inf, None, float(theta_grid[0])
    n_prev, n = 0, config.n0

    while n <= config.n_max:
        it_start = time.perf_counter()
        block = gen.points(n_prev, n)
        yb = np.asarray(f_eval(block.points), dtype=np.float64)
        _check_finite(yb, n_prev)
        y_all = np.concatenate([y_all, yb])
        pts_all = np.vstack([pts_all, block.points])

        if _is_degenerate(y_all):
            err, post = 0.0, None
            iterations.append(IterationRecord(n, (best_theta,), 0.0,
                                              time.perf_counter() - it_start))
            break

        best_val = np.inf
        for theta in theta_grid:
            gram = kernels.gram_matrix(
                kernels.KernelSpec("matern", 1.0, np.full(d, theta)), pts_all)
            val = dense_eb_objective(y_all, gram)
            if val < best_val:
                best_val, best_theta = val, float(theta)
        gram = kernels.gram_matrix(
            kernels.KernelSpec("matern", 1.0, np.full(d, best_theta)), pts_all)
        post = dense_posterior(y_all, gram, _matern_c_vector(best_theta, pts_all),
                               _matern_c0(best_theta, d), config.criterion)
        err = post.err
        iterations.append(IterationRecord(n, (best_theta,), float(err),
                                          time.perf_counter() - it_start))
        if err <= config.epsilon:
            break
        n_prev, n = n, 2 * n

    mu = post.mu_hat if post is not None else float(y_all.mean())
    return CubatureResult(mu_hat=float(mu), n_used=len(y_all), err=float(err),
                          tolerance_met=bool(err <= config.epsilon),
                          iterations=iterations, seed=config.seed,
                          seconds=time.perf_counter() - t_start)


def integrate_mc(f, d: int, epsilon: float, seed: int,
                 n0: int = 2**8, n_max: int = 2**24) -> CubatureResult:
    """IID baseline with CLT stopping rule 2.58 sigma / sqrt(n) <= epsilon."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    t_start = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(seed))
    y_all = np.empty(0)
    iterations: list[IterationRecord] = []
    err = np.inf
    n = n0
    while n <= n_max:
        it_start = time.perf_counter()
        block = rng.random((n - len(y_all), d))
        yb = np.asarray(f(block), dtype=np.float64)
        _check_finite(yb, len(y_all))
        y_all = np.concatenate([y_all, yb])
        sigma = float(y_all.std(ddof=1)) if len(y_all) > 1 else np.inf
        err = 2.58 * sigma / np.sqrt(len(y_all))
        iterations.append(IterationRecord(n, (), float(err),
                                          time.perf_counter() - it_start))
        if err <= epsilon:
            break
        n *= 2
    return CubatureResult(mu_hat=float(y_all.mean()), n_used=len(y_all),
                          err=float(err), tolerance_met=bool(err <= epsilon),
                          iterations=iterations, seed=seed,
                          seconds=time.perf_counter() - t_start)
