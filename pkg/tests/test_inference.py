"""Objectives, widths, gradients, the dense posterior, the hyperparameter
search, and the cancellation-safety of the eigenvalue pipeline."""

import numpy as np
import pytest

from bayescub import kernels, nodes, transforms
from bayescub.inference import (EB, FULL, GCV, DegenerateDataError,
                                HyperparameterState, NonPositiveDefiniteError,
                                TransformedData, credible_width,
                                dense_eb_objective, dense_posterior,
                                eigenvalues_from_ring_column, objective,
                                objective_eb, objective_gcv, objective_gradient,
                                search_hyperparameters, student_t_quantile,
                                transformed_data)
from bayescub.kernels import KernelSpec


def make_matched_td(family, kernel, order, eta, m, d, seed=0, y=None):
    """A (spectrum, eigenvalues) pair from a matched node/kernel setup."""
    n = 1 << m
    if family == "lattice":
        gen = nodes.make_lattice(d, seed=seed)
    else:
        gen = nodes.make_sobol(d, seed=seed)
    pts = gen.points(0, n)
    if y is None:
        y = np.cos(2 * np.pi * pts.points[:, 0]) + pts.points.prod(axis=1)
    spectrum = transforms.fbt(y, family)
    spec = KernelSpec(kernel, order, eta if np.ndim(eta) else np.full(d, eta),
                      shared_eta=bool(np.ndim(eta) == 0))
    col = kernels.ring_column(spec, gen, m)
    td = transformed_data(spectrum.coefficients, col.values, family)
    return gen, pts, y, spec, col, td


class TestEigenvaluePipeline:
    def test_tiny_eta_limit(self):
        _, _, _, _, _, td = make_matched_td("lattice", "bernoulli", 1, 1e-7, 4, 1)
        assert abs(td.lam_ring1) < 1e-6
        assert np.abs(td.lams_rest).max() < 1e-6
        assert td.lam1 == pytest.approx(16.0, abs=1e-6)

    def test_matches_dense_eigensolver(self):
        gen, pts, _, spec, col, td = make_matched_td("lattice", "bernoulli", 1,
                                                     1.4, 4, 1)
        gram = kernels.gram_matrix(spec, pts.points)
        dense = np.sort(np.linalg.eigvalsh(gram))
        fast = np.sort(np.concatenate([[td.lam1], td.lams_rest]))
        assert np.abs(dense - fast).max() < 1e-9

    def test_nonreal_transform_rejected(self):
        bad = np.random.default_rng(0).standard_normal(8)  # not even-symmetric
        with pytest.raises(NonPositiveDefiniteError):
            eigenvalues_from_ring_column(bad, "lattice")

    def test_hard_error_below_clamp(self):
        col = np.full(8, -0.9)  # strongly non-PD ring
        with pytest.raises(NonPositiveDefiniteError):
            eigenvalues_from_ring_column(col, "sobol")

    def test_clamp_counts(self):
        # a column whose transform has tiny negative entries gets clamped
        n = 8
        col = np.zeros(n)
        col[0] = -1e-9 * n / n  # constant column: ring spectrum (sum, 0...0)
        ring1, rest, clamped = eigenvalues_from_ring_column(col + 1e-12, "sobol")
        assert clamped == 0 or rest.min() > 0


def zeta_reference_width(eta: float, m: int, y: np.ndarray, dps: int = 50):
    """Extended-precision EB width for the d=1 order-1 kernel on a lattice.

    The ring eigenvalues have the exact aliased-series form
    lam_k = eta * n / (2 pi^2 n^2) * [zeta(2, k/n) + zeta(2, 1 - k/n)] with
    lam_0 = eta / (6 n); everything else is evaluated in mpmath.
    """
    import mpmath as mp

    mp.mp.dps = dps
    n = 1 << m
    e = mp.mpf(eta)
    lam_ring1 = e / (6 * n)
    pref = e * n / (2 * mp.pi**2 * n**2)
    brev = transforms._brev_indices(m)
    y_t = np.fft.fft(y[brev])[brev]
    s1 = mp.mpf(0)
    for k in range(1, n):
        freq = int(brev[k])  # spectrum entry k sits at frequency brev(k)
        lam_k = pref * (mp.zeta(2, mp.mpf(freq) / n) + mp.zeta(2, mp.mpf(n - freq) / n))
        w = mp.mpf(float(y_t[k].real)) ** 2 + mp.mpf(float(y_t[k].imag)) ** 2
        s1 += w / lam_k
    lam1 = n + lam_ring1
    err = mp.mpf("2.58") / n * mp.sqrt(lam_ring1 / lam1 * s1)
    return float(err), float(lam_ring1 / lam1)


class TestCancellationSafety:
    @staticmethod
    def _setup(ring_over_n: float, m: int):
        n = 1 << m
        eta = 6.0 * n * (ring_over_n * n)
        gen = nodes.LatticeGenerator((1,), np.zeros(1), max_log2_n=m)
        rng = np.random.default_rng(77)
        y = rng.standard_normal(n)
        spec = KernelSpec("bernoulli", 1, np.array([eta]))
        col = kernels.ring_column(spec, gen, m)
        brev = transforms._brev_indices(m)
        td = transformed_data(np.fft.fft(y[brev])[brev], col.values, "lattice")
        return eta, y, col, td

    def test_ring_ratio_matches_extended_precision(self):
        for ring_over_n in (1e-10, 1e-13):
            eta, y, col, td = self._setup(ring_over_n, 10)
            _, ratio_ref = zeta_reference_width(eta, 10, y)
            assert td.lam_ring1 / td.lam1 == pytest.approx(ratio_ref, rel=1e-6)

    def test_fast_width_matches_extended_precision(self):
        eta, y, col, td = self._setup(1e-10, 10)
        err_ref, _ = zeta_reference_width(eta, 10, y)
        fast = credible_width(EB, td)
        assert fast > 0
        assert fast == pytest.approx(err_ref, rel=1e-6)

    def test_naive_form_collapses_near_machine_precision(self):
        # ring mass ~5e-17 of lam1 at n = 2^14: the naive 1 - n/lam1 quantizes
        # to whole ulps of 1 while the ring form tracks extended precision
        m = 14
        n = 1 << m
        eta, y, col, td = self._setup(5e-17, m)
        err_ref, ratio_ref = zeta_reference_width(eta, m, y)
        fast = credible_width(EB, td)
        assert fast > 0 and fast == pytest.approx(err_ref, rel=1e-6)

        brev = transforms._brev_indices(m)
        full_col = 1.0 + col.values
        lam_naive = np.real(np.fft.fft(full_col[brev])[brev])
        one_minus = 1.0 - n / lam_naive[0]
        s1, _ = td.data_sums()
        naive = 2.58 / n * np.sqrt(max(one_minus, 0.0) * s1)
        assert abs(naive - err_ref) / err_ref > 1e-2


class TestObjectives:
    def test_n2_closed_form_eb(self):
        td = TransformedData(np.array([3.0, 2.0]), lam_ring1=1.0,
                             lams_rest=np.array([0.5]), n=2)
        expected = np.log(4.0 / 0.5) + 0.5 * (np.log(3.0) + np.log(0.5))
        assert objective_eb(td) == pytest.approx(expected, rel=1e-14)

    def test_n2_closed_form_gcv(self):
        td = TransformedData(np.array([3.0, 2.0]), lam_ring1=1.0,
                             lams_rest=np.array([0.5]), n=2)
        expected = np.log(4.0 / 0.25) - 2.0 * np.log(1.0 / 3.0 + 2.0)
        assert objective_gcv(td) == pytest.approx(expected, rel=1e-14)

    def test_degenerate_data(self):
        td = TransformedData(np.array([5.0, 0.0, 0.0, 0.0]), lam_ring1=0.5,
                             lams_rest=np.ones(3), n=4)
        with pytest.raises(DegenerateDataError):
            objective_eb(td)

    def test_kernel_scaling_leaves_objectives_unchanged(self):
        _, _, _, _, _, td = make_matched_td("lattice", "bernoulli", 1, 0.9, 5, 2)
        for b in (0.25, 7.0):
            scaled = TransformedData(td.y_tilde, b * td.lam_ring1 + (b - 1) * td.n,
                                     b * td.lams_rest, td.n)
            assert objective_eb(scaled) == pytest.approx(objective_eb(td), abs=1e-10)
            assert objective_gcv(scaled) == pytest.approx(objective_gcv(td), abs=1e-10)

    def test_scaling_argmin_invariance_on_grid(self):
        gen, pts, y, spec, _, _ = make_matched_td("lattice", "bernoulli", 1, 1.0, 5, 2)
        spectrum = transforms.fbt(y, "lattice")
        bases = kernels.lattice_column_bases(spec, gen, 5)
        grid = np.geomspace(0.01, 100, 25)

        def losses(scale):
            out = []
            for eta in grid:
                col = kernels.ring_from_bases(np.full(2, eta), bases)
                lam_ring1, rest, _ = eigenvalues_from_ring_column(col, "lattice")
                td = TransformedData(spectrum.coefficients,
                                     scale * lam_ring1 + (scale - 1) * 32,
                                     scale * rest, 32)
                out.append(objective_eb(td))
            return np.array(out)

        assert np.argmin(losses(1.0)) == np.argmin(losses(5.0))

    def test_matches_dense_objective_up_to_log_n(self):
        # fast loss log(S1) + (1/n) sum log lam equals the explicit-inverse
        # form log(y'[C^-1 - ...]y) + (1/n) log det C plus exactly log n
        for kernel, order in (("bernoulli", 1), ("bernoulli", 2)):
            gen, pts, y, spec, col, td = make_matched_td("lattice", kernel,
                                                         order, 1.7, 3, 2)
            gram = kernels.gram_matrix(spec, pts.points)
            dense = dense_eb_objective(y, gram)
            assert objective_eb(td) - dense == pytest.approx(np.log(8), rel=1e-8)

    def test_gcv_matches_dense_form(self):
        gen, pts, y, spec, col, td = make_matched_td("lattice", "bernoulli", 1,
                                                     0.8, 3, 2)
        gram = kernels.gram_matrix(spec, pts.points)
        inv = np.linalg.inv(gram)
        inv2 = inv @ inv
        ones = np.ones(8)
        quad2 = y @ inv2 @ y - (ones @ inv2 @ y) ** 2 / (ones @ inv2 @ ones)
        dense = np.log(quad2) - 2.0 * np.log(np.trace(inv))
        assert objective_gcv(td) - dense == pytest.approx(np.log(8), rel=1e-8)


class TestObjectiveGradient:
    def analytic_and_numeric(self, kind, family, kernel, order, m, d, shared, seed):
        rng = np.random.default_rng(seed)
        eta = (float(rng.uniform(0.3, 2.5)) if shared
               else rng.uniform(0.3, 2.5, size=d))
        gen, pts, y, spec, col, td = make_matched_td(family, kernel, order, eta,
                                                     m, d, seed=seed)
        bases = (kernels.lattice_column_bases(spec, gen, m) if family == "lattice"
                 else kernels.sobol_column_bases(spec, gen, m))
        jac = kernels.column_eta_jacobian(spec, bases, col.values)
        dlam = np.vstack([np.real(transforms.fbt(row, family).coefficients)
                          for row in jac])
        grad = objective_gradient(td, kind, dlam)

        def loss_at(eta_vec):
            c = kernels.ring_from_bases(eta_vec, bases)
            tdh = transformed_data(td.y_tilde, c, family)
            return objective(kind, tdh)

        base = spec.eta.copy()
        if shared:
            h = 1e-4
            num = np.array([(loss_at(base * (1 + h)) - loss_at(base * (1 - h)))
                            / (2 * h * base[0])])
        else:
            num = np.empty(d)
            for ell in range(d):
                h = 1e-4 * base[ell]
                up, dn = base.copy(), base.copy()
                up[ell] += h
                dn[ell] -= h
                num[ell] = (loss_at(up) - loss_at(dn)) / (2 * h)
        return grad, num

    @pytest.mark.parametrize("kind", [EB, GCV])
    def test_matches_central_difference(self, kind):
        # rel 1e-5 plus a small absolute floor covering the difference
        # quotient's own rounding noise near stationary points
        rng = np.random.default_rng(999 if kind == EB else 998)
        for i in range(100):
            family = "lattice" if i % 3 else "sobol"
            kernel = "walsh1" if family == "sobol" else ("bernoulli", "bernoulli")[i % 2]
            order = 1 if kernel == "walsh1" else (1, 2)[i % 2]
            d = int(rng.integers(1, 4))
            shared = bool(i % 2)
            grad, num = self.analytic_and_numeric(kind, family, kernel, order,
                                                  5, d, shared, seed=i)
            tol = 1e-5 * np.maximum(np.abs(grad), np.abs(num)) + 1e-7
            assert (np.abs(grad - num) <= tol).all(), (kind, i, grad, num)

    def test_zero_derivative_gives_zero_gradient(self):
        _, _, _, _, _, td = make_matched_td("lattice", "bernoulli", 1, 1.0, 4, 2)
        dlam = np.zeros((2, td.n))
        assert (objective_gradient(td, EB, dlam) == 0).all()
        assert (objective_gradient(td, GCV, dlam) == 0).all()

    def test_shared_equals_sum_of_per_dim(self):
        d = 3
        eta = 1.3
        gen, pts, y, spec_sh, col, td = make_matched_td("lattice", "bernoulli",
                                                        1, eta, 5, d)
        spec_pd = KernelSpec("bernoulli", 1, np.full(d, eta), shared_eta=False)
        bases = kernels.lattice_column_bases(spec_sh, gen, 5)
        jac_sh = kernels.column_eta_jacobian(spec_sh, bases, col.values)
        jac_pd = kernels.column_eta_jacobian(spec_pd, bases, col.values)
        g_sh = objective_gradient(td, EB, np.real(
            transforms.fbt(jac_sh[0], "lattice").coefficients)[None, :])
        dlam_pd = np.vstack([np.real(transforms.fbt(row, "lattice").coefficients)
                             for row in jac_pd])
        g_pd = objective_gradient(td, EB, dlam_pd)
        assert g_sh[0] == pytest.approx(g_pd.sum(), rel=1e-10)


class TestStudentT:
    def test_cauchy_closed_form(self):
        # dof = 1 is Cauchy: quantile = tan(pi (p - 1/2))
        assert student_t_quantile(1) == pytest.approx(np.tan(np.pi * 0.495), rel=1e-10)
        assert student_t_quantile(1) == pytest.approx(63.657, rel=1e-4)

    def test_normal_limit(self):
        from scipy.special import ndtri
        assert student_t_quantile(10**6) == pytest.approx(ndtri(0.995), abs=1e-3)
        assert student_t_quantile(10**6) == pytest.approx(2.5758, abs=1e-3)

    def test_monotone_in_dof(self):
        vals = [student_t_quantile(k) for k in range(1, 101)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_dof_validation(self):
        with pytest.raises(ValueError):
            student_t_quantile(0)


class TestCredibleWidth:
    def test_constant_data_gives_zero(self):
        td = TransformedData(np.array([4.0, 0.0, 0.0, 0.0]), lam_ring1=0.3,
                             lams_rest=np.ones(3), n=4)
        for kind in (EB, FULL, GCV):
            assert credible_width(kind, td) == 0.0

    def test_full_at_least_eb(self):
        rng = np.random.default_rng(15)
        for _ in range(25):
            n = 16
            td = TransformedData(rng.standard_normal(n), float(rng.uniform(0, 5)),
                                 rng.uniform(0.1, 3.0, size=n - 1), n)
            assert credible_width(FULL, td) >= credible_width(EB, td)

    def test_n2_hand_computation(self):
        td = TransformedData(np.array([0.0, 2.0]), lam_ring1=1.0,
                             lams_rest=np.array([1.0]), n=2)
        assert credible_width(EB, td) == pytest.approx(2.58 / np.sqrt(3.0), rel=1e-12)

    def test_scale_equivariance(self):
        _, _, _, _, col, td = make_matched_td("lattice", "bernoulli", 2, 1.1, 5, 2)
        for a in (3.0, 0.125):
            scaled = TransformedData(a * td.y_tilde, td.lam_ring1, td.lams_rest, td.n)
            for kind in (EB, FULL, GCV):
                assert credible_width(kind, scaled) == pytest.approx(
                    a * credible_width(kind, td), rel=1e-12)


class TestDensePosterior:
    def test_identity_gram(self):
        rng = np.random.default_rng(30)
        y = rng.standard_normal(12)
        post = dense_posterior(y, np.eye(12), np.ones(12), 1.0, EB)
        assert post.m == pytest.approx(y.mean(), rel=1e-12)
        assert post.s2 == pytest.approx(((y - y.mean()) ** 2).mean(), rel=1e-12)
        assert post.mu_hat == pytest.approx(y.mean(), rel=1e-12)

    def test_matched_kernel_mu_is_sample_mean(self):
        gen, pts, y, spec, col, td = make_matched_td("lattice", "bernoulli", 1,
                                                     0.6, 5, 2)
        gram = kernels.gram_matrix(spec, pts.points)
        for kind in (EB, FULL, GCV):
            post = dense_posterior(y, gram, np.ones(32), 1.0, kind)
            assert post.mu_hat == pytest.approx(y.mean(), abs=1e-10 * abs(y.mean()))

    def test_widths_agree_with_fast(self):
        for family, kernel, order, m in (("lattice", "bernoulli", 1, 6),
                                         ("sobol", "walsh1", 1, 5)):
            gen, pts, y, spec, col, td = make_matched_td(family, kernel, order,
                                                         1.2, m, 3)
            nodes_arg = pts.points if family == "lattice" else pts.int_points
            gram = kernels.gram_matrix(spec, nodes_arg)
            n = 1 << m
            for kind in (EB, FULL, GCV):
                post = dense_posterior(y, gram, np.ones(n), 1.0, kind, extended=True)
                assert post.err == pytest.approx(credible_width(kind, td), rel=1e-8)

    def test_non_pd_error(self):
        bad = -np.eye(4)
        with pytest.raises(NonPositiveDefiniteError):
            dense_posterior(np.ones(4), bad, np.ones(4), 1.0, EB)


class TestHyperparameterSearch:
    def test_map_round_trip(self):
        state = HyperparameterState.from_constrained([2.5, 1.75, 0.3],
                                                     ("eta", "order_r", "order_q"))
        back = state.constrained()
        assert np.abs(back - [2.5, 1.75, 0.3]).max() < 1e-12

    def test_quadratic_surrogate_converges(self):
        calls = {"n": 0}

        def quad(t):
            calls["n"] += 1
            return float((t[0] - 1.3) ** 2), None

        init = HyperparameterState(np.zeros(1), ("eta",))
        res = search_hyperparameters(quad, init, budget=50)
        assert abs(res.state.t[0] - 1.3) < 1e-4
        assert calls["n"] <= 50

    def test_grad_descent_zero_step_returns_init(self):
        def obj(t):
            return float((t**2).sum()), None

        init = HyperparameterState(np.array([0.7]), ("eta",))
        res = search_hyperparameters(obj, init, method="grad_descent", budget=10,
                                     step=0.0, gradient_fn=lambda t: 2 * t)
        assert res.state.t[0] == 0.7

    def test_nonfinite_at_init_raises(self):
        def bad(t):
            return np.inf, None

        with pytest.raises(ValueError):
            search_hyperparameters(bad, HyperparameterState(np.zeros(1), ("eta",)),
                                   budget=5)

    def test_keister_eta_is_local_min(self):
        from bayescub.problems import keister_problem, periodize

        prob = keister_problem(4)
        gen = nodes.make_lattice(4, seed=2)
        m = 10
        f = periodize(prob.evaluator, "sidi_c1")
        y = f(gen.points(0, 1 << m).points)
        spectrum = transforms.fbt(y, "lattice")
        spec0 = KernelSpec("bernoulli", 2, np.ones(4))
        bases = kernels.lattice_column_bases(spec0, gen, m)

        def loss_of_eta(eta):
            col = kernels.ring_from_bases(np.full(4, eta), bases)
            return objective_eb(transformed_data(spectrum.coefficients, col,
                                                 "lattice"))

        def obj(t):
            return loss_of_eta(float(np.exp(t[0]))), None

        res = search_hyperparameters(obj, HyperparameterState(np.zeros(1), ("eta",)),
                                     budget=100)
        eta_opt = float(np.exp(res.state.t[0]))
        best = loss_of_eta(eta_opt)
        assert loss_of_eta(eta_opt * 1.001) > best
        assert loss_of_eta(eta_opt * 0.999) > best
