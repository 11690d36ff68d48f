import math

import numpy as np
import pytest

from perturbkit.classify import MarginContext, feasibility_bound
from perturbkit.metrics import MetricError, fooling_ratio, mse, psnr, rho1, rho2
from perturbkit.model import Dataset, Example, linear_model, predict
from perturbkit.norms import lp_norm
from perturbkit.runner import build_attack

INF = math.inf


def linear_fixture(seed=0, n=40):
    """Binary linear classifier with a labeled dataset it mostly gets right."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((2, 3))
    model = linear_model(w)
    examples = []
    for _ in range(n):
        x = rng.standard_normal(3)
        examples.append(Example(x, label=int(np.argmax(w @ x))))
    return model, Dataset(examples)


class TestFoolingRatio:
    def test_zero_budget_gives_zero(self):
        model, data = linear_fixture()
        fn = build_attack("gnm", kind="classification", p=INF, eps=0.0)
        assert fooling_ratio(model, data, fn) == 0.0

    def test_linear_model_saturates_past_worst_bound(self):
        model, data = linear_fixture(seed=1)
        worst = max(
            feasibility_bound(MarginContext.build(model, ex.x), INF) for ex in data
        )
        fn = build_attack("gnm", kind="classification", p=INF, eps=1.01 * worst)
        assert fooling_ratio(model, data, fn) == 1.0

    def test_no_correct_examples_rejected(self):
        model, _ = linear_fixture(seed=2)
        wrong = Dataset(
            [Example(ex.x, label=1 - ex.label) for ex in linear_fixture(seed=2)[1]]
        )
        fn = build_attack("gnm", kind="classification", p=INF, eps=0.1)
        with pytest.raises(MetricError):
            fooling_ratio(model, wrong, fn)

    def test_monotone_in_eps_on_linear_models(self):
        model, data = linear_fixture(seed=3)
        fn = lambda eps: build_attack("gnm", kind="classification", p=INF, eps=eps)
        ratios = [fooling_ratio(model, data, fn(e)) for e in np.linspace(0, 2.0, 8)]
        assert all(b >= a for a, b in zip(ratios, ratios[1:]))


class TestRho1:
    def test_linear_binary_matches_analytic(self):
        model, data = linear_fixture(seed=4)
        w = model.layers[0].weights
        expected = []
        for ex in data:
            if predict(model, ex.x) != ex.label:
                continue
            k = ex.label
            diff = w[k] - w[1 - k]
            bound = float(diff @ ex.x) / lp_norm(diff, 1)  # q dual to p=inf
            expected.append(bound / lp_norm(ex.x, INF))
        stat = rho1(model, data, INF)
        assert stat.n_used == len(expected)
        assert abs(stat.value - np.mean(expected)) <= 1e-5 * np.mean(expected)

    def test_boundary_example_contributes_zero(self):
        model = linear_model(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        data = Dataset([Example([0.0, 1.0], label=0)])  # exactly on the boundary
        stat = rho1(model, data, INF)
        assert stat.value == 0.0

    def test_input_scaling_halves_the_ratio(self):
        # same boundary distance, doubled input norm
        w = np.array([[1.0, 0.0], [-1.0, 0.0]])
        model = linear_model(w)
        x = np.array([0.5, 4.0])
        d1 = rho1(model, Dataset([Example(x, label=0)]), INF).value
        d2 = rho1(
            linear_model(w),
            Dataset([Example(np.array([0.5, 8.0]), label=0)]),
            INF,
        ).value
        # perturbation need is unchanged (distance 0.5) but ||x||_inf doubles
        assert abs(d2 - d1 / 2) <= 1e-6 * d1

    def test_exclusions_counted(self):
        model, data = linear_fixture(seed=5)
        flipped = Dataset(
            [Example(ex.x, label=1 - ex.label) for ex in data.examples[:3]]
            + data.examples[3:]
        )
        stat = rho1(model, flipped, INF)
        assert stat.exclusions["misclassified"] >= 3


class TestRho2:
    def test_equals_mean_feasibility_bound(self):
        model, data = linear_fixture(seed=6)
        bounds = [
            feasibility_bound(MarginContext.build(model, ex.x), INF)
            for ex in data
            if predict(model, ex.x) == ex.label
        ]
        stat = rho2(model, data, INF)
        assert stat.value == math.fsum(bounds) / len(bounds)

    def test_score_scaling_invariant(self):
        model, data = linear_fixture(seed=7)
        w = model.layers[0].weights
        scaled = linear_model(3.7 * np.asarray(w))
        a = rho2(model, data, INF).value
        b = rho2(scaled, data, INF).value
        assert abs(a - b) <= 1e-9 * a

    def test_boundary_gives_zero(self):
        model = linear_model(np.array([[1.0, 0.0], [1.0, 0.0]]))
        data = Dataset([Example([2.0, 1.0], label=0)])
        assert rho2(model, data, INF).value == 0.0


class TestMsePsnr:
    def test_equal_inputs_give_infinite_psnr(self):
        a = np.array([0.1, 0.2])
        assert mse(a, a) == 0.0
        assert psnr(a, a) == math.inf

    def test_twenty_db_example(self):
        a = np.zeros(4)
        b = np.full(4, 0.1)  # mse = 0.01
        assert abs(psnr(a, b, peak=1.0) - 20.0) < 1e-12

    def test_halving_mse_adds_three_db(self):
        a = np.zeros(8)
        b = np.full(8, 0.2)
        c = np.full(8, 0.2 / math.sqrt(2))
        assert abs((psnr(a, c) - psnr(a, b)) - 10 * math.log10(2)) < 1e-9

    def test_strictly_decreasing_in_mse(self):
        a = np.zeros(5)
        values = [psnr(a, np.full(5, s)) for s in [0.05, 0.1, 0.2, 0.4]]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_joint_permutation_invariance(self):
        rng = np.random.default_rng(8)
        a, b = rng.random(10), rng.random(10)
        perm = rng.permutation(10)
        assert mse(a, b) == mse(a[perm], b[perm])
        assert psnr(a, b) == psnr(a[perm], b[perm])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse(np.zeros(3), np.zeros(4))

    def test_bad_peak(self):
        with pytest.raises(ValueError):
            psnr(np.zeros(2), np.ones(2), peak=0.0)


class TestRobustnessOrdering:
    def test_larger_margins_order_all_three_measures(self):
        # same points, two linear models: the rotated boundary sits
        # uniformly closer to every example than the axis-aligned one
        from perturbkit.runner import robustness_summary

        rng = np.random.default_rng(9)
        examples = []
        for _ in range(30):
            d = rng.uniform(1.0, 2.0) * rng.choice([-1.0, 1.0])
            examples.append(Example([d, 0.0], label=0 if d > 0 else 1))
        data = Dataset(examples)
        wide = linear_model(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        narrow = linear_model(np.array([[1.0, -1.0], [-1.0, 1.0]]))
        eps_grid = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0]
        a = robustness_summary(wide, data, INF, eps_grid)
        b = robustness_summary(narrow, data, INF, eps_grid)
        assert b["rho1"] < a["rho1"]
        assert b["rho2"] < a["rho2"]
        assert b["min_eps_99"] <= a["min_eps_99"]


class TestRho1VsRho2Consistency:
    def test_single_example_linear_relation(self):
        # on a linear model the minimal perturbation is exact, so
        # rho1 == rho2 / ||x||_p for a one-example dataset
        w = np.array([[2.0, 1.0], [-1.0, 0.5]])
        model = linear_model(w)
        x = np.array([1.5, -0.3])
        data = Dataset([Example(x, label=int(np.argmax(w @ x)))])
        r1 = rho1(model, data, INF).value
        r2 = rho2(model, data, INF).value
        assert abs(r1 - r2 / lp_norm(x, INF)) <= 1e-5 * r1
