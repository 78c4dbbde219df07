import math

import numpy as np
import pytest

from mbeslope import timekernels as tk
from mbeslope import verify
from mbeslope.timekernels import TimeMesh


class TestRandomMesh:
    def test_admissible_and_normalized(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            mesh = verify.random_mesh(rng, n_max=100)
            assert mesh.admissible(4.8 + 1e-12)
            if mesh.N > 1:
                assert mesh.T == pytest.approx(1.0, rel=1e-12)

    def test_length_varies(self):
        rng = np.random.default_rng(1)
        sizes = {verify.random_mesh(rng, n_max=100).N for _ in range(60)}
        assert len(sizes) > 10


class TestForceInequalities:
    def test_sweep_passes(self):
        report = verify.check_force_inequalities(trials=20000, seed=0)
        assert report.passed
        assert report.worst_slack >= -1e-12

    def test_hand_case_first_inequality(self):
        # u = (1, 0), v = 0: the force vanishes, the bound is -3/4
        u = np.array([1.0, 0.0])
        v = np.zeros(2)
        z = u - v
        fu = (u @ u - 1.0) * u
        lhs = z @ fu
        rhs = 0.25 * ((u @ u) ** 2 - (v @ v) ** 2) - 0.5 * (u @ u - v @ v) - 0.5 * (z @ z)
        assert lhs == 0.0
        assert rhs == -0.75

    def test_equal_vectors_zero_slack(self):
        u = np.array([0.3, -1.2])
        fu = (u @ u - 1.0) * u
        assert (u - u) @ fu == 0.0


class TestKernelIdentities:
    def test_sweep_passes(self):
        report = verify.check_kernel_identities(trials=100, seed=0)
        assert report.passed
        assert report.detail["orthogonality"] >= 0.0
        assert report.detail["row_sum"] >= 0.0
        assert report.detail["product_vs_recursion"] >= 0.0

    def test_corruption_detected(self):
        report = verify.check_kernel_identities(trials=20, seed=0, _corrupt=True)
        assert not report.passed


class TestPositiveDefiniteness:
    def test_sweep_passes(self):
        report = verify.check_positive_definiteness(trials=300, seed=0)
        assert report.passed

    def test_single_entry_sequence(self):
        # n = 1: the kernel form is 2 w^2 / tau against rate(0, 0)/2 = 1/tau
        mesh = TimeMesh.from_steps([0.4])
        b0, _ = tk.bdf2_coeffs(mesh, 1)
        w = 1.7
        lhs = w * b0 * w
        rhs = 0.5 * tk.positivity_rate(0.0, 0.0) * w * w / 0.4
        assert lhs >= rhs
        assert lhs == pytest.approx(2.0 * rhs, rel=1e-14)

    def test_constant_sequence_telescopes(self):
        mesh = TimeMesh.uniform(1.0, 6)
        n, tau = 6, 1.0 / 6.0
        w = np.ones(n)
        lhs = sum(
            w[k - 1] * (tk.bdf2_coeffs(mesh, k)[0] * w[k - 1]
                        + (tk.bdf2_coeffs(mesh, k)[1] * w[k - 2] if k >= 2 else 0.0))
            for k in range(1, n + 1)
        )
        # uniform steps: 2/tau for the starter plus (n-1) terms of 1/tau
        assert lhs == pytest.approx((2.0 + (n - 1)) / tau, rel=1e-13)
        rates = [tk.positivity_rate(mesh.ratio(k), mesh.ratio(k + 1)) for k in range(1, n + 1)]
        rhs = 0.5 * sum(r / tau for r in rates)
        assert lhs >= rhs

    def test_fixed_mesh_accepted(self):
        mesh = TimeMesh.uniform(1.0, 12)
        report = verify.check_positive_definiteness(mesh=mesh, trials=100, seed=3)
        assert report.passed


class TestDocKernelProperties:
    def test_sweep_passes(self):
        report = verify.check_doc_kernel_properties(trials=150, seed=0)
        assert report.passed
        assert report.detail["positivity"] > 0.0

    def test_uniform_three_level_table(self):
        # 3x3 dense inversion by hand: tau = 1, starter 2, interior (3/2, -1/2)
        mesh = TimeMesh.uniform(3.0, 3)
        B = np.array([
            [2.0, 0.0, 0.0],
            [-0.5, 1.5, 0.0],
            [0.0, -0.5, 1.5],
        ])
        Theta = np.linalg.inv(B)
        rows = tk.doc_table(mesh, 3)
        for k in range(1, 4):
            np.testing.assert_allclose(rows[k - 1], Theta[k - 1, :k], rtol=1e-13)

    def test_degenerate_single_level(self):
        mesh = TimeMesh.from_steps([0.7])
        report = verify.check_doc_kernel_properties(mesh=mesh, trials=20, seed=1)
        assert report.passed


class TestGradientEmbedding:
    def test_sweep_passes(self):
        report = verify.check_gradient_embedding(trials=300, seed=0)
        assert report.passed
        assert report.detail["l4_ratio_worst"] > 0.0

    def test_single_mode_profile(self):
        # u = sin x: closed forms for every norm in the chain
        M = 64
        L = 2.0 * math.pi
        h = L / M
        x = h * np.arange(M)
        a = np.tile(np.sin(x)[:, None], (1, M))
        gx = (np.roll(a, -1, 0) - np.roll(a, 1, 0)) / (2 * h)
        lap = (np.roll(a, -1, 0) + np.roll(a, 1, 0) + np.roll(a, -1, 1)
               + np.roll(a, 1, 1) - 4 * a) / h**2
        mag_sq = gx * gx
        grad6 = h * h * float(np.sum(mag_sq**3))
        grad4 = h * h * float(np.sum(mag_sq**2))
        grad2 = h * h * float(np.sum(mag_sq))
        lap2 = h * h * float(np.sum(lap * lap))
        c = math.sin(h) / h
        # discrete moments of cos^2: mean powers 1/2, 3/8, 5/16
        assert grad2 == pytest.approx(c**2 * L**2 / 2, rel=1e-12)
        assert grad4 == pytest.approx(c**4 * L**2 * 3 / 8, rel=1e-12)
        assert grad6 == pytest.approx(c**6 * L**2 * 5 / 16, rel=1e-12)
        assert grad6 <= 40.0 * grad4 * (4.0 * lap2 + grad2 / L**2)


class TestEnergyDissipation:
    def test_small_run(self):
        report = verify.check_energy_dissipation(M=32, T=0.3, tau=2e-3)
        assert report.passed
        assert report.detail["dissipation_violations"] == 0


class TestRunAll:
    def test_smoke(self):
        reports = verify.run_all(seed=0, trials=5,
                                 energy_config=dict(M=32, T=0.1, tau=2e-3))
        assert len(reports) == 6
        assert all(r.passed for r in reports)
        lines = [r.line() for r in reports]
        assert all(line.endswith("PASS") for line in lines)

    def test_corruption_propagates(self):
        reports = verify.run_all(seed=0, trials=5,
                                 energy_config=dict(M=32, T=0.1, tau=2e-3),
                                 _corrupt_kernels=True)
        assert not all(r.passed for r in reports)
