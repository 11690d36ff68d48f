import subprocess
import sys

import numpy as np
import pytest

from perturbkit import backend


class TestSelection:
    def test_active_is_listed(self):
        assert backend.backend_name() in ("compiled", "python")
        assert "python" in backend.available_backends()

    def test_override_restores(self):
        before = backend.backend_name()
        with backend.override("python"):
            assert backend.backend_name() == "python"
        assert backend.backend_name() == before

    def test_unknown_override_rejected(self):
        with pytest.raises(ValueError):
            with backend.override("fortran"):
                pass

    def test_env_var_forces_python(self):
        code = (
            "import perturbkit.backend as b; print(b.backend_name())"
        )
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PERTURBKIT_BACKEND": "python", "PATH": "/usr/bin:/bin"},
            capture_output=True,
            text=True,
            cwd="/",
        )
        assert out.stdout.strip() == "python"

    def test_env_var_unknown_fails_import(self):
        code = "import perturbkit.backend"
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PERTURBKIT_BACKEND": "gpu", "PATH": "/usr/bin:/bin"},
            capture_output=True,
            text=True,
            cwd="/",
        )
        assert out.returncode != 0
        assert "PERTURBKIT_BACKEND" in out.stderr


class TestKernelAgreement:
    def test_exhaustive_signs_agree(self):
        if len(backend.available_backends()) < 2:
            pytest.skip("only one backend built")
        rng = np.random.default_rng(42)
        for _ in range(25):
            cols = np.ascontiguousarray(rng.standard_normal((int(rng.integers(1, 11)), 5)))
            results = {}
            for name in backend.available_backends():
                with backend.override(name):
                    rho, val = backend.active().exhaustive_signs(cols)
                    results[name] = (rho.copy(), val)
            (rho_a, val_a), (rho_b, val_b) = results.values()
            assert abs(val_a - val_b) <= 1e-9 * max(1.0, abs(val_a))
            # identical tie-breaking: the same pattern wins in both
            np.testing.assert_array_equal(rho_a, rho_b)

    def test_greedy_signs_agree(self):
        if len(backend.available_backends()) < 2:
            pytest.skip("only one backend built")
        rng = np.random.default_rng(43)
        for _ in range(25):
            cols = np.ascontiguousarray(rng.standard_normal((8, 6)))
            results = []
            for name in backend.available_backends():
                with backend.override(name):
                    results.append(backend.active().greedy_signs(cols).copy())
            np.testing.assert_array_equal(results[0], results[1])
