import numpy as np
import pytest

from sgdclt import problems as pr
from sgdclt.errors import DegenerateSigma, NotSPD


def central_diff_grad(f, x, h=1e-6):
    d = len(x)
    g = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def central_diff_hess(grad, x, h=1e-5):
    d = len(x)
    H = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        H[:, i] = (grad(x + e) - grad(x - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


class TestQuadratic:
    def test_identity(self):
        p = pr.make_quadratic(np.eye(2))
        assert p.mu == p.L == 1.0
        assert np.allclose(p.grad(np.array([1.0, 2.0])), [1.0, 2.0])

    def test_diagonal(self):
        p = pr.make_quadratic(np.diag([1.0, 4.0]))
        assert p.mu == 1.0 and p.L == 4.0

    def test_not_spd(self):
        with pytest.raises(NotSPD):
            pr.make_quadratic(np.diag([1.0, -0.1]))

    def test_batched_gradient(self):
        p = pr.make_quadratic(np.diag([1.0, 2.0]))
        X = np.random.default_rng(0).standard_normal((7, 2))
        G = p.grad(X)
        assert G.shape == (7, 2)
        assert np.allclose(G, X * np.array([1.0, 2.0]))


class TestLogisticDataset:
    def test_deterministic_per_seed(self):
        a = pr.generate_logistic(d=4, N=50, beta=0.1, seed=3)
        b = pr.generate_logistic(d=4, N=50, beta=0.1, seed=3)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_gradient_matches_finite_differences(self, rng):
        ds = pr.generate_logistic(d=5, N=60, beta=0.05, seed=1)
        for _ in range(10):
            x = rng.standard_normal(5)
            g = ds.grad(x)
            g_fd = central_diff_grad(lambda z: float(ds.f(z)), x)
            assert np.linalg.norm(g - g_fd) <= 1e-5 * max(1.0, np.linalg.norm(g))

    def test_hessian_floor_is_penalty(self):
        ds = pr.generate_logistic(d=10, N=1000, beta=0.05, seed=7)
        H = ds.hess(np.zeros(10))
        assert np.linalg.eigvalsh(H).min() >= 0.05 - 1e-12

    def test_degenerate_but_valid(self):
        ds = pr.generate_logistic(d=1, N=1, beta=1.0, seed=0)
        prob = pr.logistic_problem(ds)
        assert prob.mu >= 1.0 - 1e-12

    def test_csv_roundtrip(self, tmp_path):
        ds = pr.generate_logistic(d=3, N=20, beta=0.05, seed=5)
        path = tmp_path / "data.csv"
        pr.save_logistic_csv(ds, path)
        back = pr.load_logistic_csv(path, penalty=0.05)
        assert np.allclose(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)

    def test_csv_header_validation(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            pr.load_logistic_csv(path, penalty=0.1)


class TestMinimizer:
    def test_gradient_norm_at_solution(self, logistic10):
        ds, problem, _, _ = logistic10
        assert np.linalg.norm(ds.grad(problem.x_star)) <= 1e-10

    def test_hessian_matches_finite_differences(self, logistic10):
        ds, problem, _, _ = logistic10
        H_fd = central_diff_hess(ds.grad, problem.x_star)
        rel = np.linalg.norm(problem.hessian - H_fd) / np.linalg.norm(problem.hessian)
        assert rel <= 1e-4

    def test_symmetric_dataset_zero_minimizer(self):
        # mirroring every sample as (-w, y) makes the data losses even in
        # w^T x, so the penalized objective is even and x* = 0 exactly
        rng = np.random.default_rng(2)
        W = rng.standard_normal((30, 3))
        y = (rng.random(30) < 0.5).astype(float)
        ds = pr.LogisticDataset(
            features=np.vstack([W, -W]), labels=np.concatenate([y, y]),
            penalty=0.1,
        )
        x_star, _ = pr.solve_minimizer(ds)
        assert np.linalg.norm(x_star) <= 1e-9


class TestStochasticGradient:
    def test_additive_moments(self, rng):
        sig = np.array([[1.0, 0.3], [0.3, 0.5]])
        p = pr.make_quadratic(np.eye(2))
        noise = pr.AdditiveNoise(sig)
        x = np.array([0.7, -0.2])
        n = 10**5
        xs = np.repeat(x[None, :], n, axis=0)
        g, xi = pr.sample_stochastic_gradient(p, noise, xs, rng)
        se = np.sqrt(np.diag(sig) / n)
        assert np.all(np.abs(xi.mean(axis=0)) <= 4.0 * se)
        C = np.cov(xi.T)
        assert np.linalg.norm(C - sig) <= 0.05 * np.linalg.norm(sig)

    def test_uniform_noise_bounded_and_calibrated(self, rng):
        sig = np.diag([0.4, 0.9])
        noise = pr.AdditiveNoise(sig, dist="uniform")
        p = pr.make_quadratic(np.eye(2))
        xs = np.zeros((10**5, 2))
        _, xi = pr.sample_stochastic_gradient(p, noise, xs, rng)
        C = np.cov(xi.T)
        assert np.linalg.norm(C - sig) <= 0.05 * np.linalg.norm(sig)
        assert np.isfinite(xi).all()

    def test_full_batch_noise_free(self, logistic10, rng):
        ds, problem, _, _ = logistic10
        noise = pr.MiniBatchNoise(ds, batch_size=ds.N)
        x = problem.x_star + 0.1
        g, xi = pr.sample_stochastic_gradient(problem, noise, x, rng)
        assert np.allclose(xi, 0.0)
        assert np.allclose(g, problem.grad(x))

    def test_gradient_at_minimizer_is_pure_noise(self, rng):
        p = pr.make_quadratic(np.diag([1.0, 3.0]))
        noise = pr.AdditiveNoise(np.eye(2))
        g, xi = pr.sample_stochastic_gradient(p, noise, p.x_star, rng)
        assert np.allclose(g, -xi)

    def test_minibatch_mean_is_full_gradient(self, logistic10, rng):
        ds, problem, noise, _ = logistic10
        x = problem.x_star + 0.05
        n = 10**5
        xs = np.repeat(x[None, :], n, axis=0)
        g, xi = pr.sample_stochastic_gradient(problem, noise, xs, rng)
        sd = xi.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(xi.mean(axis=0)) <= 4.0 * sd + 1e-12)


class TestSigmaAtMin:
    def test_additive_identity(self):
        p = pr.make_quadratic(np.eye(2))
        noise = pr.AdditiveNoise(np.eye(2))
        assert np.allclose(pr.sigma_at_min(p, noise), np.eye(2))

    def test_two_point_rank_one_degenerate(self):
        # dataset {(w, 1), (w, 0)}: per-sample gradients at x* = 0 are -w/2, +w/2
        w = np.array([1.0, 2.0])
        ds = pr.LogisticDataset(features=np.vstack([w, w]), labels=np.array([1.0, 0.0]),
                                penalty=0.1)
        x_star, H = pr.solve_minimizer(ds)
        assert np.linalg.norm(x_star) <= 1e-10
        G = ds.per_sample_grad(np.zeros((2, 2)), np.array([0, 1]))
        assert np.allclose(G[0], -w / 2) and np.allclose(G[1], w / 2)
        prob = pr.logistic_problem(ds)
        with pytest.raises(DegenerateSigma):
            pr.sigma_at_min(prob, pr.MiniBatchNoise(ds, 1))

    def test_logistic_sigma_spd(self, logistic10):
        _, _, _, sigma = logistic10
        assert np.linalg.eigvalsh(sigma).min() > 0
        assert np.allclose(sigma, sigma.T)

    def test_finite_population_correction(self, logistic10):
        ds, problem, _, sigma1 = logistic10
        sigma2 = pr.sigma_at_min(problem, pr.MiniBatchNoise(ds, batch_size=2))
        expect = sigma1 / 2.0 * (ds.N - 2) / (ds.N - 1)
        assert np.allclose(sigma2, expect)


class TestProperties:
    def test_smoothness_sampled(self, logistic10, rng):
        _, problem, _, _ = logistic10
        X = problem.x_star + rng.standard_normal((1000, 10))
        Y = problem.x_star + rng.standard_normal((1000, 10))
        lhs = np.linalg.norm(problem.grad(X) - problem.grad(Y), axis=1)
        rhs = problem.L * np.linalg.norm(X - Y, axis=1)
        assert np.all(lhs <= rhs * (1.0 + 1e-9))

    def test_strong_convexity_sampled(self, logistic10, rng):
        _, problem, _, _ = logistic10
        X = problem.x_star + rng.standard_normal((1000, 10))
        Y = problem.x_star + rng.standard_normal((1000, 10))
        inner = np.sum((problem.grad(X) - problem.grad(Y)) * (X - Y), axis=1)
        dist2 = np.sum((X - Y) ** 2, axis=1)
        assert np.all(inner >= problem.mu * dist2 * (1.0 - 1e-9))

    def test_quadratic_properties(self, rng):
        A = np.diag([0.5, 2.0, 5.0])
        p = pr.make_quadratic(A)
        X = rng.standard_normal((500, 3))
        Y = rng.standard_normal((500, 3))
        lhs = np.linalg.norm(p.grad(X) - p.grad(Y), axis=1)
        assert np.all(lhs <= p.L * np.linalg.norm(X - Y, axis=1) * (1 + 1e-12))

    def test_noise_third_moment_envelope(self, logistic10, rng):
        # E|xi|^3 stays under a fitted affine envelope in |grad f|^3
        ds, problem, noise, _ = logistic10
        points = problem.x_star + rng.standard_normal((12, 10)) * 0.5
        m3, g3 = [], []
        for x in points:
            xs = np.repeat(x[None, :], 4000, axis=0)
            _, xi = pr.sample_stochastic_gradient(problem, noise, xs, rng)
            m3.append(np.mean(np.linalg.norm(xi, axis=1) ** 3))
            g3.append(np.linalg.norm(problem.grad(x)) ** 3)
        m3, g3 = np.array(m3), np.array(g3)
        assert np.all(np.isfinite(m3))
        K = max(0.0, float(np.polyfit(g3, m3, 1)[0]))
        M = float(np.max(m3 - K * g3))
        assert np.all(m3 <= M + K * g3 + 1e-9)
        assert M < np.inf and K >= 0.0


class TestCounterexample:
    def test_perturbation_bounds_on_grid(self):
        p = pr.CounterexampleProblem()
        x = np.linspace(-100.0, 100.0, 20001)
        R = p.R(x)
        assert np.all(R <= 3.0 * x**2 + 1e-12)
        inner = np.linspace(-1.0, 1.0, 2001)
        assert np.all(p.R(inner) >= inner**2 - 1e-12)

    def test_critical_point_at_origin(self):
        p = pr.CounterexampleProblem()
        assert p.grad(np.zeros((1,)))[0] == 0.0
        h = 1e-6
        d2 = (p.f(np.array([h])) - 2 * p.f(np.array([0.0])) + p.f(np.array([-h]))) / h**2
        assert d2 == pytest.approx(1.0, abs=1e-3)

    def test_gradient_matches_finite_differences(self):
        p = pr.CounterexampleProblem()
        for x0 in (-2.0, -0.5, 0.3, 1.7):
            g = p.grad(np.array([x0]))[0]
            h = 1e-6
            g_fd = (p.f(np.array([x0 + h])) - p.f(np.array([x0 - h]))) / (2 * h)
            assert g == pytest.approx(g_fd, rel=1e-5, abs=1e-8)

    def test_mean_objective_not_convex_everywhere(self):
        # second difference of f at -0.5 is negative; the perturbed objective
        # genuinely leaves the strongly convex class
        p = pr.CounterexampleProblem()
        h = 1e-4
        x = -0.5
        d2 = (p.f(np.array([x + h])) - 2 * p.f(np.array([x])) + p.f(np.array([x - h]))) / h**2
        assert d2 < 0

    def test_noise_model(self, rng):
        p = pr.CounterexampleProblem(b_bound=1.0)
        noise = p.noise()
        assert noise.sigma_matrix[0, 0] == pytest.approx(1.0 / 3.0)
        xi = noise.sample_xi((10**5, 1), rng)
        assert np.max(np.abs(xi)) <= 1.0 + 1e-12
        assert np.var(xi) == pytest.approx(1.0 / 3.0, rel=0.05)
