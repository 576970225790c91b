import numpy as np
import pytest

from dget import diagnostics, engine, graph, problems, theory
from dget.engine import AlgorithmConfig, IterateState


def brute_stationarity(p, x):
    m = x.shape[0]
    g = np.zeros(p.d)
    for i in range(m):
        for j in range(p.n):
            g += p.sample_gradient_uncharged(i, j, x[i])
    g /= m * p.n
    xbar = sum(x[i] for i in range(m)) / m
    cons = sum(float(np.dot(x[i] - xbar, x[i] - xbar)) for i in range(m)) / m
    return float(np.dot(g, g)), cons


class TestStationarity:
    def test_minimizer(self):
        p = problems.make_problem("shifted-quadratic", 4, 10, 3, seed=1)
        rep = diagnostics.stationarity(p, np.tile(p.minimizer(), (4, 1)))
        assert rep.h == pytest.approx(0.0, abs=1e-28)

    def test_single_node(self):
        p = problems.make_problem("nonconvex-logistic", 1, 10, 3, seed=1)
        x = np.array([[0.5, -0.1, 0.2]])
        rep = diagnostics.stationarity(p, x)
        g = p.local_gradients(x)[0]
        assert rep.consensus_term == 0.0 and rep.h == pytest.approx(g @ g, rel=1e-15)

    @pytest.mark.parametrize("kind", problems.KINDS)
    def test_brute_force(self, kind, rng):
        p = problems.make_problem(kind, 4, 15, 3, seed=2)
        x = rng.normal(size=(4, 3))
        rep = diagnostics.stationarity(p, x)
        grad_term, cons = brute_stationarity(p, x)
        assert rep.grad_term == pytest.approx(grad_term, abs=1e-12)
        assert rep.consensus_term == pytest.approx(cons, abs=1e-12)
        assert rep.h == rep.grad_term + rep.consensus_term
        assert p.ifo.total == 0


class TestDiagnosticRow:
    def test_refresh_is_exact(self, logistic8, rng):
        x = rng.normal(size=(8, 10))
        v = logistic8.local_gradients(x)
        row = diagnostics.diagnostic_row(logistic8, IterateState(0, x, v.copy(), v, v), 0.1)
        assert row.estimator_err == 0.0 and row.tracking_err <= 1e-30

    def test_consensus_start(self, logistic8):
        x = np.tile(np.linspace(-1, 1, 10), (8, 1))
        v = logistic8.local_gradients(x)
        row = diagnostics.diagnostic_row(logistic8, IterateState(0, x, v.copy(), v, v), 0.2)
        vbar = v.mean(axis=0)
        brute = sum(float(np.dot(v[i] - vbar, v[i] - vbar)) for i in range(8))
        assert row.y_consensus == pytest.approx(brute, rel=1e-13)
        assert row.potential_H == pytest.approx(logistic8.objective(x[0]) + 0.2 * brute / 8, rel=1e-13)

    def test_quadratic_run_rows(self, quad8, ring8):
        tr = engine.run_dget(quad8, ring8, AlgorithmConfig(alpha=0.1, T=100, q=8, s2=3))
        assert tr["estimator_err"].max() <= 1e-20
        for col in ("tracking_err", "estimator_err", "y_consensus", "h"):
            assert np.all(tr[col] >= 0)


class TestVarianceCheck:
    @pytest.fixture
    def online(self):
        return problems.make_problem("shifted-quadratic", 4, 20, 3, seed=4, online=True, sigma2=0.8)

    def test_single_draw(self, online):
        rep = diagnostics.variance_bound_check(online, np.zeros((4, 3)), 1, trials=10_000)
        assert rep.passed and rep.mean_sq_error <= 4 * 0.8 * 1.1

    def test_zero_variance(self):
        p = problems.make_problem("shifted-quadratic", 2, 5, 3, online=True, sigma2=0.0)
        assert diagnostics.variance_bound_check(p, np.ones((2, 3)), 4, trials=1000).mean_sq_error == 0.0

    def test_doubling_halves(self, online):
        a = diagnostics.variance_bound_check(online, np.zeros((4, 3)), 8, trials=10_000, seed=1)
        b = diagnostics.variance_bound_check(online, np.zeros((4, 3)), 16, trials=10_000, seed=2)
        assert b.mean_sq_error / a.mean_sq_error == pytest.approx(0.5, rel=0.15)

    def test_needs_trials(self, online):
        with pytest.raises(ValueError):
            diagnostics.variance_bound_check(online, np.zeros((4, 3)), 1, trials=10)


class TestPotentialCheck:
    def test_exact_instance(self, quad8, ring8):
        plan = theory.theorem1_stepsize(quad8.L, ring8.eta)
        consts = theory.potential_constants(plan.alpha, quad8.L, plan.beta, ring8.eta, 8)
        tr = engine.run_dget(quad8, ring8, AlgorithmConfig(alpha=plan.alpha, T=1000, q=8, s2=8))
        assert diagnostics.potential_descent_check(tr, consts).passed

    def test_invalid_constants(self, quad8, ring8):
        consts = theory.potential_constants(10.0, 1.0, 1.0, ring8.eta, 8, strict=False)
        tr = engine.run_dget(quad8, ring8, AlgorithmConfig(alpha=1e-3, T=5, q=8, s2=8))
        assert diagnostics.potential_descent_check(tr, consts).status == "constants invalid"

    def test_vacuous(self, quad8, ring8):
        plan = theory.theorem1_stepsize(1.0, ring8.eta)
        consts = theory.potential_constants(plan.alpha, 1.0, plan.beta, ring8.eta, 8)
        tr = engine.run_dget(quad8, ring8, AlgorithmConfig(alpha=plan.alpha, T=0, q=8, s2=8))
        assert diagnostics.potential_descent_check(tr, consts).passed

    def test_detects_violation(self, quad8, ring8):
        # a far-too-large C1 demands more descent than any run delivers
        tr = engine.run_dget(quad8, ring8, AlgorithmConfig(alpha=1e-3, T=20, q=8, s2=8))
        bogus = theory.PotentialConstants(1.0, 1e6, 1.0, 1.0)
        rep = diagnostics.potential_descent_check(tr, bogus)
        assert rep.status == "fail" and rep.first_violation == 1

    def test_seed_average_on_stochastic_instance(self, logistic8, ring8):
        plan = theory.theorem1_stepsize(logistic8.L, ring8.eta)
        consts = theory.potential_constants(plan.alpha, logistic8.L, plan.beta, ring8.eta, 8)
        traces = [
            engine.run_dget(logistic8, ring8, AlgorithmConfig(alpha=plan.alpha, T=200, q=15, s2=15, seed=s))
            for s in range(20)
        ]
        assert diagnostics.potential_descent_check(traces, consts).passed

    def test_needs_every_iteration(self, quad8, ring8):
        plan = theory.theorem1_stepsize(1.0, ring8.eta)
        consts = theory.potential_constants(plan.alpha, 1.0, plan.beta, ring8.eta, 8)
        tr = engine.run_dget(quad8, ring8, AlgorithmConfig(alpha=plan.alpha, T=10, q=8, s2=8, diag_every=2))
        with pytest.raises(ValueError):
            diagnostics.potential_descent_check(tr, consts)
