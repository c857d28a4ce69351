"""The finite-difference checker itself: exactness, sensitivity, reporting."""

import numpy as np

from prodkg.gradcheck import grad_check


class TestGradCheck:
    def test_quadratic_is_exact(self):
        """Half squared norm has a linear gradient: central differences are exact."""
        def loss_fn(p):
            theta = p["theta"]
            return 0.5 * float(theta @ theta), {"theta": theta}

        report = grad_check(loss_fn, {"theta": np.array([0.3, -1.2, 4.0])}, eps=1e-4)
        assert report.max_rel_error < 1e-10

    def test_correct_nonlinear_gradient_passes(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 5))

        def loss_fn(p):
            x = p["x"]
            return float(np.sum(np.tanh(a @ x))), {"x": a.T @ (1 - np.tanh(a @ x) ** 2)}

        report = grad_check(loss_fn, {"x": rng.normal(size=5)}, eps=1e-5)
        assert report.max_rel_error < 1e-4

    def test_corrupted_gradient_detected(self):
        """A deliberately wrong coordinate must push the error above tolerance."""
        def loss_fn(p):
            theta = p["theta"]
            grad = theta.copy()
            grad[1] += 0.5
            return 0.5 * float(theta @ theta), {"theta": grad}

        report = grad_check(loss_fn, {"theta": np.array([1.0, 2.0, 3.0])}, eps=1e-4)
        assert not report.passed(1e-4)
        assert report.worst_param == "theta"
        assert report.worst_index == (1,)

    def test_missing_gradient_treated_as_zero(self):
        def loss_fn(p):
            return 0.5 * float(p["a"] @ p["a"]), {"a": p["a"]}

        report = grad_check(loss_fn, {"a": np.ones(2), "b": np.ones(2)}, eps=1e-4)
        # "b" does not influence the loss, so a zero gradient is correct
        assert report.passed(1e-4)

    def test_subset_sampling_deterministic(self):
        rng = np.random.default_rng(1)
        big = rng.normal(size=(40, 40))

        def loss_fn(p):
            return float(np.sum(p["m"] ** 2)), {"m": 2 * p["m"]}

        a = grad_check(loss_fn, {"m": big}, eps=1e-5, max_coords_per_param=20, seed=3)
        b = grad_check(loss_fn, {"m": big}, eps=1e-5, max_coords_per_param=20, seed=3)
        assert a.n_coords_checked == b.n_coords_checked == 20
        assert a.max_rel_error == b.max_rel_error

    def test_report_summary_readable(self):
        def loss_fn(p):
            return float(p["x"] @ p["x"]), {"x": 2 * p["x"]}

        report = grad_check(loss_fn, {"x": np.ones(3)}, eps=1e-5)
        text = report.summary()
        assert "max rel err" in text and "x" in text
