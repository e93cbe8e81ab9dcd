"""The numba kernels and their numpy fallbacks must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from staggerdid import _kernels

pytestmark = pytest.mark.skipif(_kernels.numba is None, reason="numba not installed")


def _panel(rng, n_units=200, n_periods=12, drop=0.3):
    unit = np.repeat(np.arange(n_units), n_periods)
    pos = np.tile(np.arange(n_periods), n_units)
    keep = rng.random(len(unit)) >= drop
    return unit[keep], pos[keep]


def test_demean_paths_agree(rng):
    unit, pos = _panel(rng)
    x = rng.normal(size=(len(unit), 4))
    a, ia = _kernels._demean_two_way_nb(x, unit, pos, 200, 12, 1e-10, 10_000)
    b, ib = _kernels._demean_two_way_np(x, unit, pos, 200, 12, 1e-10, 10_000)
    assert ia > 0 and ib > 0
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_demean_reports_cap(rng):
    unit, pos = _panel(rng)
    x = rng.normal(size=(len(unit), 1))
    assert _kernels._demean_two_way_nb(x, unit, pos, 200, 12, 0.0, 3)[1] == -1
    assert _kernels._demean_two_way_np(x, unit, pos, 200, 12, 0.0, 3)[1] == -1


def test_group_sum_paths_agree(rng):
    g = rng.integers(0, 37, size=1000)
    x = rng.normal(size=(1000, 3))
    np.testing.assert_allclose(_kernels._group_sum_nb(x, g, 37), _kernels._group_sum_np(x, g, 37), atol=1e-12)


def test_longest_runs_paths_agree(rng):
    unit, pos = _panel(rng, drop=0.2)
    ok = rng.random(len(unit)) > 0.1
    np.testing.assert_array_equal(
        _kernels._longest_runs_nb(unit, pos, ok, 200), _kernels._longest_runs_np(unit, pos, ok, 200)
    )


def test_env_flag_selects_numpy():
    code = "from staggerdid import _kernels; print(_kernels.USING_NUMBA)"
    env = dict(os.environ, STAGGERDID_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
