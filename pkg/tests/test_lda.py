import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sketchcp.decompose import PowerConfig, robust_tpm_exact
from sketchcp.errors import InputFormatError, RankDeficiencyError
from sketchcp.lda import (
    Corpus,
    LdaModel,
    analytic_moments,
    compute_m1,
    compute_m2,
    fit_spectral_lda,
    generate_synthetic_corpus,
    heldout_likelihood,
    infer_mixtures,
    match_topics,
    model_from_json,
    model_to_json,
    project_simplex,
    raw_moments,
    read_docword,
    recover_params,
    sketch_whitened_m3,
    whiten,
    whitened_m3_dense,
    write_docword,
)
from sketchcp.sketch import SymTensorSketchSet, sketch_dense_sym
from sketchcp.tensor_core import CPDecomposition


def tokens(row, V):
    return [w for w in range(V) for _ in range(int(row[w]))]


def brute_moments(X, alpha0, cross_term="unbiased"):
    """M1, M2, M3 by enumerating ordered tuples of distinct word positions per document."""
    D, V = X.shape
    e = np.eye(V)
    m1, e2, e3, e2_literal = [], [], [], []
    for row in X:
        tok = tokens(row, V)
        if len(tok) >= 1:
            m1.append(row / len(tok))
        if len(tok) >= 2:
            pairs = list(itertools.permutations(tok, 2))
            e2.append(sum(np.outer(e[a], e[b]) for a, b in pairs) / len(pairs))
            e2_literal.append(np.outer(row, row) / len(pairs))
        if len(tok) >= 3:
            trip = list(itertools.permutations(tok, 3))
            e3.append(sum(np.einsum("i,j,k->ijk", e[a], e[b], e[c]) for a, b, c in trip) / len(trip))
    M1 = np.mean(m1, axis=0)
    E2 = np.mean(e2, axis=0)
    E2x = E2 if cross_term == "unbiased" else np.mean(e2_literal, axis=0)
    M2 = E2 - alpha0 / (alpha0 + 1) * np.outer(M1, M1)
    cross = np.einsum("ij,k->ijk", E2x, M1)
    cross = cross + cross.transpose(0, 2, 1) + cross.transpose(2, 0, 1)
    M3 = (np.mean(e3, axis=0) - alpha0 / (alpha0 + 2) * cross
          + 2 * alpha0**2 / ((alpha0 + 1) * (alpha0 + 2)) * np.einsum("i,j,k->ijk", M1, M1, M1))
    return M1, M2, M3


def small_corpus(seed=0, D=12, V=5):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, size=(D, V))
    X[0] = [1, 1, 0, 0, 0]  # a two-word document, skipped by the third moment
    return Corpus(sp.csr_matrix(X), V), X


def whitened(M3, W):
    return np.einsum("ijk,ia,jb,kc->abc", M3, W, W, W)


class TestCorpus:
    def test_from_docs_and_validation(self):
        c = Corpus.from_docs(3, [{0: 2, 2: 1}, {1: 1}])
        np.testing.assert_array_equal(c.counts.toarray(), [[2, 0, 1], [0, 1, 0]])
        np.testing.assert_array_equal(c.lengths, [3, 1])
        with pytest.raises(ValueError):
            Corpus.from_docs(2, [{5: 1}])
        with pytest.raises(ValueError):
            Corpus(sp.csr_matrix(np.array([[-1, 2]])))


class TestMoments:
    def test_m1_examples(self):
        np.testing.assert_array_equal(compute_m1(Corpus.from_docs(2, [{0: 3}])), [1.0, 0.0])
        one = Corpus.from_docs(3, [{0: 1, 2: 3}])
        two = Corpus.from_docs(3, [{0: 1, 2: 3}, {0: 2, 2: 6}])
        np.testing.assert_allclose(compute_m1(two), compute_m1(one))

    def test_pair_hand_example(self):
        a0 = 1.0
        M2 = compute_m2(Corpus.from_docs(2, [{0: 1, 1: 1}]), a0)
        expected = np.array([[0.0, 0.5], [0.5, 0.0]]) - a0 / (a0 + 1) * np.full((2, 2), 0.25)
        np.testing.assert_allclose(M2, expected, atol=1e-15)

    def test_m2_matches_enumeration(self):
        c, X = small_corpus()
        M1, M2, _ = brute_moments(X, 0.7)
        np.testing.assert_allclose(compute_m1(c), M1, atol=1e-14)
        np.testing.assert_allclose(compute_m2(c, 0.7), M2, atol=1e-14)

    @pytest.mark.parametrize("cross_term", ["unbiased", "literal"])
    def test_whitened_m3_matches_enumeration(self, cross_term):
        c, X = small_corpus(1)
        with pytest.warns(UserWarning, match="skipped"):
            wm = whiten(compute_m2(c, 0.7), 3)
            _, _, M3 = brute_moments(X, 0.7, cross_term)
            got = whitened_m3_dense(c, wm, 0.7, cross_term)
            sset = sketch_whitened_m3(c, wm, 0.7, SymTensorSketchSet.create(3, 64, 2, 0), cross_term)
        np.testing.assert_allclose(got, whitened(M3, wm.W), atol=1e-12)
        np.testing.assert_allclose(sset.data, sketch_dense_sym(got, sset, atol=1e-12).data, atol=1e-10)

    def test_cross_term_choice_matters(self):
        c, _ = small_corpus(2)
        wm = whiten(compute_m2(c, 1.0), 3)
        a = whitened_m3_dense(c, wm, 1.0, "unbiased")
        b = whitened_m3_dense(c, wm, 1.0, "literal")
        assert np.abs(a - b).max() > 1e-3
        with pytest.raises(ValueError):
            whitened_m3_dense(c, wm, 1.0, "other")

    def test_short_documents_give_zero_sketch(self):
        c = Corpus.from_docs(3, [{0: 1, 1: 1}, {2: 1, 1: 1}, {0: 1, 2: 1}])
        wm = whiten(np.eye(3), 2)
        with pytest.warns(UserWarning, match="3 document"):
            sset = sketch_whitened_m3(c, wm, 1.0, SymTensorSketchSet.create(2, 16, 2, 0))
        assert not sset.data.any()

    def test_population_identities(self):
        """Raw moments rebuilt from (M1, M2, M3) are those of the generative model."""
        _, model = generate_synthetic_corpus(6, 3, 0, [0.3, 0.5, 0.2], 10, 0)
        a, a0, Phi = model.alpha, model.alpha0, model.Phi
        # Dirichlet moments: E[h_i h_j] and E[h_i h_j h_l]
        Ehh = (np.outer(a, a) + np.diag(a)) / (a0 * (a0 + 1))
        Ehhh = np.einsum("i,j,l->ijl", a, a, a)
        for i in range(3):
            Ehhh[i, i, :] += a[i] * a
            Ehhh[i, :, i] += a[i] * a
            Ehhh[:, i, i] += a[i] * a
            Ehhh[i, i, i] += 2 * a[i]
        Ehhh /= a0 * (a0 + 1) * (a0 + 2)
        M1, E2, E3 = raw_moments(model)
        np.testing.assert_allclose(M1, Phi @ a / a0, atol=1e-15)
        np.testing.assert_allclose(E2, Phi @ Ehh @ Phi.T, atol=1e-14)
        np.testing.assert_allclose(E3, np.einsum("ijl,ai,bj,cl->abc", Ehhh, Phi, Phi, Phi), atol=1e-14)

    def test_empirical_moments_converge(self):
        c, model = generate_synthetic_corpus(8, 3, 20000, 0.5, 20, 3)
        _, M2, _ = analytic_moments(model)
        assert np.abs(compute_m2(c, model.alpha0) - M2).max() < 3e-3


class TestWhiten:
    def test_identity(self):
        wm = whiten(np.eye(4), 4)
        np.testing.assert_allclose(wm.W.T @ np.eye(4) @ wm.W, np.eye(4), atol=1e-12)

    def test_diagonal(self):
        wm = whiten(np.diag([4.0, 1.0]), 2)
        np.testing.assert_allclose(np.abs(wm.W), np.diag([0.5, 1.0]), atol=1e-12)
        np.testing.assert_allclose(wm.W.T @ np.diag([4.0, 1.0]) @ wm.W, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(wm.W_pinv_T.T @ wm.W, np.eye(2), atol=1e-12)

    def test_rank_deficiency(self):
        with pytest.raises(RankDeficiencyError, match="eigenvalue 3"):
            whiten(np.diag([2.0, 1.0, 0.0]), 3)
        with pytest.raises(ValueError):
            whiten(np.eye(2), 3)


class TestRecovery:
    def test_exact_moment_round_trip(self):
        _, model = generate_synthetic_corpus(20, 3, 0, [0.2, 0.5, 0.3], 10, 4)
        _, M2, M3 = analytic_moments(model)
        wm = whiten(M2, 3)
        D = robust_tpm_exact(whitened(M3, wm.W), PowerConfig(k=3, seed=0))
        # the population whitened tensor has eigenvalues 2 / (a0 + 2) * sqrt(a0 (a0 + 1) / alpha_i)
        got = recover_params(D, wm, model.alpha0)
        perm, l1 = match_topics(model.Phi, got.Phi)
        assert l1.max() <= 1e-4
        np.testing.assert_allclose(got.alpha[perm], model.alpha, rtol=1e-3)
        assert got.is_valid()

    def test_negative_eigenvalue_folds_into_vector(self):
        wm = whiten(np.diag([4.0, 1.0]), 2)
        V = np.eye(2)
        a = recover_params(CPDecomposition.from_symmetric([0.5, 0.8], V), wm, 1.0, project=False)
        b = recover_params(CPDecomposition.from_symmetric([-0.5, 0.8], V * [-1, 1]), wm, 1.0, project=False)
        np.testing.assert_allclose(a.Phi, b.Phi)
        np.testing.assert_allclose(a.alpha, b.alpha)

    def test_zero_eigenvalue(self):
        wm = whiten(np.eye(2), 2)
        with pytest.raises(RankDeficiencyError, match="component 2"):
            recover_params(CPDecomposition.from_symmetric([1.0, 0.0], np.eye(2)), wm, 1.0)

    def test_alpha_formula(self):
        wm = whiten(np.eye(2), 2)
        got = recover_params(CPDecomposition.from_symmetric([1.0, 2.0], np.eye(2)), wm, 1.0, project=False)
        np.testing.assert_allclose(got.alpha, 8.0 / 9.0 / np.array([1.0, 4.0]))
        np.testing.assert_allclose(got.info["raw_topics"], wm.W_pinv_T @ np.diag([1.5, 3.0]))

    def test_match_topics_permutation(self):
        Phi = np.array([[0.7, 0.1, 0.2], [0.3, 0.9, 0.8]])
        perm, l1 = match_topics(Phi, Phi[:, [2, 0, 1]])
        np.testing.assert_array_equal(perm, [1, 2, 0])
        assert not l1.any()


class TestProjectSimplex:
    @settings(max_examples=50)
    @given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-5, 5)))
    def test_lands_on_simplex_and_is_closest(self, y):
        p = project_simplex(y)
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
        rng = np.random.default_rng(0)
        others = rng.dirichlet(np.ones(y.size), size=200)
        assert np.all(np.linalg.norm(others - y, axis=1) >= np.linalg.norm(p - y) - 1e-12)

    def test_fixed_points_and_hand_value(self):
        x = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_simplex(x), x, atol=1e-15)
        np.testing.assert_allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
        np.testing.assert_allclose(project_simplex([0.5, 0.5, -1.0]), [0.5, 0.5, 0.0])
        cols = project_simplex(np.array([[2.0, 0.5], [0.0, 0.5]]))
        np.testing.assert_allclose(cols, [[1.0, 0.5], [0.0, 0.5]])


class TestHeldout:
    def test_identity_topics_recover_frequencies(self):
        c = Corpus.from_docs(3, [{0: 1, 1: 3}, {2: 2}])
        Pi = infer_mixtures(np.eye(3), c)
        np.testing.assert_allclose(Pi, [[0.25, 0.0], [0.75, 0.0], [0.0, 1.0]], atol=1e-6)

    def test_uniform_topic(self):
        model = LdaModel(np.full((4, 1), 0.25), [1.0])
        c = Corpus.from_docs(4, [{0: 2, 3: 1}, {1: 5}])
        assert heldout_likelihood(model, c) == pytest.approx(np.log(0.25))

    def test_per_document_average(self):
        model = LdaModel(np.array([[0.5, 0.0], [0.5, 0.0], [0.0, 1.0]]), [1.0, 1.0])
        c = Corpus.from_docs(3, [{0: 1}, {2: 3}])
        value, details = heldout_likelihood(model, c, return_details=True)
        np.testing.assert_allclose(details["per_document"], [np.log(0.5), 0.0], atol=1e-6)
        assert value == pytest.approx(np.log(0.5) / 2, abs=1e-6)

    def test_zero_probability_is_floored(self):
        model = LdaModel(np.array([[1.0], [0.0]]), [1.0])
        c = Corpus.from_docs(2, [{0: 1, 1: 1}])
        with pytest.warns(UserWarning, match="floored"):
            value, details = heldout_likelihood(model, c, return_details=True)
        assert details["floored"] == 1
        assert value == pytest.approx(np.log(1e-12) / 2)

    def test_vocabulary_mismatch(self):
        with pytest.raises(InputFormatError):
            heldout_likelihood(LdaModel(np.full((3, 1), 1 / 3), [1.0]), Corpus.from_docs(2, [{0: 1}]))


class TestSynthetic:
    def test_deterministic_and_valid(self):
        a = generate_synthetic_corpus(30, 4, 50, 0.25, 20, 7, heldout=10)
        b = generate_synthetic_corpus(30, 4, 50, 0.25, 20, 7, heldout=10)
        assert (a[0].counts != b[0].counts).nnz == 0 and (a[1].counts != b[1].counts).nnz == 0
        np.testing.assert_array_equal(a[2].Phi, b[2].Phi)
        assert a[2].is_valid() and a[0].D == 50 and a[1].D == 10
        np.testing.assert_array_equal(a[0].lengths, 20)

    def test_large_alpha_concentrates_mixtures(self):
        c, model = generate_synthetic_corpus(10, 3, 10_000, 1e6, 30, 0)
        freq = np.asarray(c.counts.sum(axis=0)).ravel() / c.counts.sum()
        np.testing.assert_allclose(freq, model.Phi.mean(axis=1), atol=0.01)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            generate_synthetic_corpus(10, 2, 5, -1.0, 10, 0)


class TestIO:
    def test_docword_roundtrip(self, tmp_path):
        c, _ = generate_synthetic_corpus(15, 2, 8, 0.5, 6, 1)
        write_docword(tmp_path / "d.txt", c)
        back = read_docword(tmp_path / "d.txt", V=15)
        assert (back.counts != c.counts).nnz == 0

    @pytest.mark.parametrize("text", ["x\n2\n1\n1 1 1\n", "1\n2\n2\n1 1 1\n", "1\n2\n1\n1 3 1\n",
                                      "1\n2\n1\n2 1 1\n", "1\n2\n1\n1 1 0\n"])
    def test_docword_errors(self, tmp_path, text):
        p = tmp_path / "bad.txt"
        p.write_text(text)
        with pytest.raises(InputFormatError):
            read_docword(p)

    def test_docword_vocab_mismatch(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1\n2\n1\n1 1 1\n")
        with pytest.raises(InputFormatError):
            read_docword(p, V=3)

    def test_model_json_roundtrip(self):
        model = LdaModel(np.array([[0.2, 0.6], [0.8, 0.4]]), [0.1, 0.3])
        obj = model_to_json(model, ["a", "b"])
        assert obj["Phi"][0] == [0.2, 0.8] and obj["vocabulary"] == ["a", "b"]
        back = model_from_json(obj)
        np.testing.assert_array_equal(back.Phi, model.Phi)
        np.testing.assert_array_equal(back.alpha, model.alpha)


class TestFit:
    @pytest.mark.parametrize("method", ["exact", "fast"])
    def test_small_plant(self, method):
        c, held, model = generate_synthetic_corpus(30, 3, 3000, 1 / 3, 40, 5, heldout=200)
        got, timings = fit_spectral_lda(c, 3, alpha0=1.0, b=1024, B=10, L=10, T_iters=15, seed=0, method=method)
        assert set(timings) == {"moments", "whitening", "sketch", "decomposition", "recovery"}
        _, l1 = match_topics(model.Phi, got.Phi)
        assert l1.max() <= 0.3
        assert got.is_valid()
        assert heldout_likelihood(model, held) - heldout_likelihood(got, held) <= 0.05

    def test_unknown_method(self):
        c, _ = generate_synthetic_corpus(10, 2, 50, 0.5, 10, 0)
        with pytest.raises(ValueError):
            fit_spectral_lda(c, 2, method="other")
