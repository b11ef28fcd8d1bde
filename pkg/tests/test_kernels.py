"""Kernel backends: env-flag selection and numpy/numba agreement."""

import numpy as np
import pytest

from diffstock import kernels


@pytest.fixture
def codes():
    rng = np.random.default_rng(3)
    return kernels.bin_codes(rng.normal(size=(9, 50)), 16)


def test_bin_codes_range_and_constant_row():
    x = np.vstack([np.linspace(0, 1, 20), np.full(20, 4.2)])
    codes = kernels.bin_codes(x, 8)
    assert codes.min() == 0 and codes[0].max() == 7
    assert (codes[1] == 0).all()  # constant row -> single bin
    assert codes[0, -1] == 7  # max value lands in the top bin, not out of range


def test_backend_env_selection(monkeypatch):
    monkeypatch.setenv("DIFFSTOCK_BACKEND", "numpy")
    assert kernels.backend_name() == "numpy"
    monkeypatch.setenv("DIFFSTOCK_BACKEND", "bogus")
    with pytest.raises(ValueError):
        kernels.backend_name()
    monkeypatch.delenv("DIFFSTOCK_BACKEND")
    assert kernels.backend_name() in ("numba", "numpy")


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
def test_backends_agree(monkeypatch, codes):
    monkeypatch.setenv("DIFFSTOCK_BACKEND", "numpy")
    m_np = kernels.marginal_entropies(codes, 16)
    j_np = kernels.joint_entropy_matrix(codes, 16)
    monkeypatch.setenv("DIFFSTOCK_BACKEND", "numba")
    m_nb = kernels.marginal_entropies(codes, 16)
    j_nb = kernels.joint_entropy_matrix(codes, 16)
    assert np.abs(m_np - m_nb).max() < 1e-12
    assert np.abs(j_np - j_nb).max() < 1e-12


@pytest.mark.parametrize("backend", ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else []))
def test_joint_diagonal_equals_marginal(monkeypatch, codes, backend):
    monkeypatch.setenv("DIFFSTOCK_BACKEND", backend)
    marg = kernels.marginal_entropies(codes, 16)
    joint = kernels.joint_entropy_matrix(codes, 16)
    assert np.array_equal(np.diag(joint), marg)
    assert np.array_equal(joint, joint.T)
