import numpy as np
import pytest

from sketchcp import _fft
from sketchcp.contraction import (
    approx_Ibc_asym,
    approx_Ivv_asym,
    approx_Ivv_sym,
    approx_mode_asym,
    approx_vvv_asym,
    approx_vvv_sym,
    workspace,
)
from sketchcp.sketch import (
    AsymTensorSketchSet,
    SymTensorSketchSet,
    add_scaled_rank1_sym,
    circular_convolve,
    sketch_dense_asym,
    sketch_dense_sym,
    sketch_rank1_asym,
    sketch_rank1_sym,
)
from sketchcp.tensor_core import contract_Ivv_exact, contract_mode_exact, contract_vvv_exact

from conftest import random_symmetric


def inner(x, y):
    return np.real(np.sum(x * np.conj(y), axis=-1))


def unit(rng, n):
    u = rng.standard_normal(n)
    return u / np.linalg.norm(u)


def random_data_set(cls, n, b, B, seed):
    rng = np.random.default_rng(seed)
    s = cls.create(n, b, B, seed)
    return s.with_data(rng.standard_normal((B, b)) + 1j * rng.standard_normal((B, b)))


class TestAlgebraicIdentities:
    """Deterministic identities between read-off estimators and explicit inner products."""

    def test_read_off_identity(self, backend):
        n, b = 16, 32
        aset = random_data_set(AsymTensorSketchSet, n, b, 4, 1)
        u = unit(np.random.default_rng(2), n)
        raw = approx_Ivv_asym(aset, u, aggregate=False)
        for m in range(aset.B):
            s2 = aset.slot_sketch(1, u[:, None], m)[0, 0]
            s3 = aset.slot_sketch(2, u[:, None], m)[0, 0]
            for i in range(n):
                s1 = aset.slot_sketch(0, np.eye(n)[:, i:i + 1], m)[0, 0]
                explicit = inner(aset.data[m], circular_convolve(circular_convolve(s1, s2), s3))
                np.testing.assert_allclose(raw[m, i], explicit, atol=1e-10)

    @pytest.mark.parametrize("mode", [0, 1, 2])
    def test_mode_read_off(self, mode):
        n = 8
        aset = random_data_set(AsymTensorSketchSet, n, 32, 3, 3)
        rng = np.random.default_rng(4)
        x, y = rng.standard_normal((2, n))
        raw = approx_mode_asym(aset, mode, x, y, aggregate=False)
        for i in range(n):
            vecs = [x, y]
            vecs.insert(mode, np.eye(n)[i])
            np.testing.assert_allclose(raw[:, i], inner(aset.data, sketch_rank1_asym(*vecs, aset)), atol=1e-10)

    def test_vvv_asym_identity(self):
        aset = random_data_set(AsymTensorSketchSet, 8, 32, 3, 5)
        U = np.random.default_rng(6).standard_normal((8, 4))
        raw = approx_vvv_asym(aset, U, aggregate=False)
        np.testing.assert_allclose(raw, inner(aset.data[:, None], sketch_rank1_asym(U, U, U, aset)), atol=1e-10)

    def test_vvv_sym_identity(self, backend):
        sset = random_data_set(SymTensorSketchSet, 8, 32, 3, 7)
        U = np.random.default_rng(8).standard_normal((8, 4))
        raw = approx_vvv_sym(sset, U, aggregate=False)
        np.testing.assert_allclose(raw, inner(sset.data[:, None], sketch_rank1_sym(U, sset)), atol=1e-10)

    def test_ivv_sym_is_gradient_over_three(self, backend):
        """The coordinate read-off is exactly (1/3) d/du of the vvv estimator."""
        sset = random_data_set(SymTensorSketchSet, 6, 32, 2, 9)
        u = np.random.default_rng(10).standard_normal(6)
        raw = approx_Ivv_sym(sset, u, aggregate=False)
        h = 1e-5
        for i in range(6):
            e = np.eye(6)[i] * h
            fd = (approx_vvv_sym(sset, u + e, aggregate=False) - approx_vvv_sym(sset, u - e, aggregate=False)) / (2 * h)
            np.testing.assert_allclose(raw[:, i], fd / 3.0, atol=1e-6)

    def test_euler_identity(self):
        sset = random_data_set(SymTensorSketchSet, 10, 64, 5, 11)
        U = np.random.default_rng(12).standard_normal((10, 3))
        ivv = approx_Ivv_sym(sset, U, aggregate=False)  # (B, n, L)
        np.testing.assert_allclose(np.einsum("mil,il->ml", ivv, U), approx_vvv_sym(sset, U, aggregate=False),
                                   atol=1e-10)

    def test_singleton_collision_free(self):
        T = np.zeros((4, 4, 4))
        T[0, 0, 0] = 1.0
        sset = sketch_dense_sym(T, SymTensorSketchSet.create(4, 64, 3, 0))
        np.testing.assert_allclose(approx_vvv_sym(sset, np.eye(4)[0], aggregate=False), 1.0, atol=1e-9)
        np.testing.assert_allclose(approx_Ivv_sym(sset, np.eye(4)[0]), np.eye(4)[0], atol=1e-9)

    def test_exact_on_collision_free_fixture(self):
        """With n = 1 nothing can collide and every estimator is exact."""
        T = np.full((1, 1, 1), 2.5)
        sset = sketch_dense_sym(T, SymTensorSketchSet.create(1, 8, 3, 1))
        aset = sketch_dense_asym(T, AsymTensorSketchSet.create(1, 8, 3, 1))
        for f, s in ((approx_vvv_sym, sset), (approx_vvv_asym, aset)):
            assert f(s, [2.0]) == pytest.approx(20.0, abs=1e-12)
        np.testing.assert_allclose(approx_Ivv_sym(sset, [2.0]), [10.0], atol=1e-12)
        np.testing.assert_allclose(approx_Ivv_asym(aset, [2.0]), [10.0], atol=1e-12)


class TestShapesAndZeros:
    def test_zero_inputs(self):
        rng = np.random.default_rng(0)
        T = random_symmetric(6, rng)
        sset = sketch_dense_sym(T, SymTensorSketchSet.create(6, 64, 3, 0))
        aset = sketch_dense_asym(T, AsymTensorSketchSet.create(6, 64, 3, 0))
        z = np.zeros(6)
        assert approx_vvv_sym(sset, z) == 0.0 and approx_vvv_asym(aset, z) == 0.0
        assert not approx_Ivv_sym(sset, z).any()
        assert not approx_Ivv_asym(aset, z).any()
        assert not approx_Ibc_asym(aset, rng.standard_normal(6), z).any()

    def test_ibc_degenerates_to_ivv(self):
        aset = random_data_set(AsymTensorSketchSet, 6, 32, 3, 1)
        u = np.random.default_rng(1).standard_normal(6)
        np.testing.assert_array_equal(approx_Ibc_asym(aset, u, u), approx_Ivv_asym(aset, u))

    def test_batch_matches_single(self):
        sset = random_data_set(SymTensorSketchSet, 6, 32, 3, 2)
        U = np.random.default_rng(3).standard_normal((6, 4))
        batch = approx_Ivv_sym(sset, U)
        assert batch.shape == (6, 4)
        for l in range(4):
            np.testing.assert_allclose(batch[:, l], approx_Ivv_sym(sset, U[:, l]), atol=1e-12)
        assert isinstance(approx_vvv_sym(sset, U[:, 0]), float)
        assert approx_vvv_sym(sset, U).shape == (4,)

    def test_dimension_mismatch(self):
        sset = random_data_set(SymTensorSketchSet, 6, 32, 1, 2)
        with pytest.raises(ValueError):
            approx_vvv_sym(sset, np.ones(5))


class TestWorkspace:
    def test_cache_coherence(self):
        sset = random_data_set(SymTensorSketchSet, 5, 32, 2, 4)
        ws = workspace(sset)
        np.testing.assert_allclose(ws.data_transform(), _fft.fft(sset.data), atol=1e-12)
        add_scaled_rank1_sym(sset, np.ones(5), 0.5)
        np.testing.assert_allclose(ws.data_transform(), _fft.fft(sset.data), atol=1e-12)

    @pytest.mark.parametrize("n", [8, 64])
    def test_constant_transform_count(self, n):
        """One batched forward and one batched inverse transform per call, whatever n is."""
        sset = random_data_set(SymTensorSketchSet, n, 64, 4, 5)
        aset = random_data_set(AsymTensorSketchSet, n, 64, 4, 5)
        u = np.ones(n)
        for s, f in ((sset, approx_Ivv_sym), (aset, approx_Ivv_asym)):
            ws = workspace(s)
            ws.data_transform()
            ws.reset_counters()
            f(s, u)
            assert (ws.forward_calls, ws.inverse_calls) == (1, 1)
        for s, f in ((sset, approx_vvv_sym), (aset, approx_vvv_asym)):
            ws = workspace(s)
            ws.reset_counters()
            f(s, u)
            assert (ws.forward_calls, ws.inverse_calls) == (1, 0)


def errors(kind, n=8, b=1024, B=30, runs=100):
    """Absolute errors of the median estimators against exact contractions over seeded runs."""
    out = []
    for seed in range(runs):
        rng = np.random.default_rng(1000 + seed)
        T = random_symmetric(n, rng)
        T /= np.linalg.norm(T)
        u, w = unit(rng, n), unit(rng, n)
        if kind == "vvv_sym":
            s = sketch_dense_sym(T, SymTensorSketchSet.create(n, b, B, seed))
            out.append(abs(approx_vvv_sym(s, u) - contract_vvv_exact(T, u)))
        elif kind == "Ivv_sym":
            s = sketch_dense_sym(T, SymTensorSketchSet.create(n, b, B, seed))
            out.append(np.max(np.abs(approx_Ivv_sym(s, u) - contract_Ivv_exact(T, u, u))))
        else:
            s = sketch_dense_asym(T, AsymTensorSketchSet.create(n, b, B, seed))
            if kind == "vvv_asym":
                out.append(abs(approx_vvv_asym(s, u) - contract_vvv_exact(T, u)))
            elif kind == "Ivv_asym":
                out.append(np.max(np.abs(approx_Ivv_asym(s, u) - contract_Ivv_exact(T, u, u))))
            else:
                out.append(np.max(np.abs(approx_Ibc_asym(s, u, w) - contract_mode_exact(T, 0, u, w))))
    return np.array(out)


class TestStatisticalBounds:
    """Median-of-B estimators stay within 5 ||T||_F / sqrt(b) on 95% of seeded runs."""

    @pytest.mark.parametrize("kind", ["vvv_sym", "Ivv_sym", "vvv_asym", "Ivv_asym", "Ibc_asym"])
    def test_theorem_tolerance(self, kind):
        err = errors(kind)
        assert np.mean(err <= 5 / np.sqrt(1024)) >= 0.95

    def test_rank1_power_vector(self):
        """T = v^(x)3, u = v: estimate within 0.1 of 1 on 95% of seeds at b=4096."""
        hits = 0
        for seed in range(20):
            v = unit(np.random.default_rng(seed), 16)
            s = sketch_dense_asym(np.einsum("i,j,k->ijk", v, v, v), AsymTensorSketchSet.create(16, 4096, 30, seed))
            hits += abs(approx_vvv_asym(s, v) - 1.0) <= 0.1
        assert hits >= 19

    def test_more_replicates_help(self):
        e5 = errors("vvv_sym", b=256, B=5, runs=100)
        e30 = errors("vvv_sym", b=256, B=30, runs=100)
        assert np.quantile(e30, 0.95) <= np.quantile(e5, 0.95)


class TestCubicFormPath:
    """For n**3 <= b the symmetric estimators go through cached cubic forms; values must not change."""

    @pytest.mark.parametrize("n,b", [(4, 64), (5, 256)])
    def test_matches_transform_path(self, monkeypatch, n, b):
        from sketchcp import contraction

        sset = random_data_set(SymTensorSketchSet, n, b, 3, 9)
        U = np.random.default_rng(10).standard_normal((n, 6))
        assert contraction._use_forms(sset)
        forms = approx_Ivv_sym(sset, U, aggregate=False), approx_vvv_sym(sset, U, aggregate=False)
        monkeypatch.setattr(contraction, "_use_forms", lambda s: False)
        fft = approx_Ivv_sym(sset, U, aggregate=False), approx_vvv_sym(sset, U, aggregate=False)
        for a, c in zip(forms, fft):
            np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-12)

    def test_forms_follow_deflation(self, monkeypatch):
        from sketchcp import contraction

        sset = random_data_set(SymTensorSketchSet, 4, 128, 2, 11)
        u = unit(np.random.default_rng(12), 4)
        approx_vvv_sym(sset, u)  # fill the cache
        add_scaled_rank1_sym(sset, u, 0.5)
        after = approx_vvv_sym(sset, u, aggregate=False)
        monkeypatch.setattr(contraction, "_use_forms", lambda s: False)
        np.testing.assert_allclose(after, approx_vvv_sym(sset, u, aggregate=False), rtol=1e-10)
