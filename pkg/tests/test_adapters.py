import numpy as np
import pytest

from vlra.adapters import (AdapterKind, KINDS, METHOD_NAMES, backward, backward_batch,
                           flop_count, forward, forward_batch, kind_from_name,
                           make_adapter, merge, mora_rank, param_count,
                           perturb_trainables)
from vlra.errors import ShapeError
from vlra.linalg import Rng

ALL_DIMS = [(7, 5), (5, 7), (3, 11), (16, 16), (2, 2)]


def layer_setup(k, d, seed=0):
    W0 = Rng(seed, 0).normal_matrix(d, k) / np.sqrt(k)
    beta0 = 0.5 * Rng(seed, 0).normal(d)
    return W0, beta0


def fresh(name, k, d, seed=0, W0=None):
    return make_adapter(kind_from_name(name), k, d, Rng(seed, 1), W0=W0)


def randomized(name, k, d, seed=0):
    W0, beta0 = layer_setup(k, d, seed)
    a = fresh(name, k, d, seed, W0=W0)
    perturb_trainables(a, Rng(seed + 99, 1), 0.5)
    return a, W0, beta0


class TestMoraRank:
    def test_general_rule(self):
        assert mora_rank(768, 768, 1, very_low=False) == 39  # sqrt(1536) ~ 39.19

    def test_very_low(self):
        assert mora_rank(768, 768, very_low=True) == 28  # sqrt(768) ~ 27.71

    def test_smallest(self):
        assert mora_rank(1, 1, 1, very_low=False) == 1  # sqrt(2) rounds to 1

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            mora_rank(4, 4, r=0)


class TestParamCount:
    # the method-table formulas, frozen
    FORMULAS = {
        "ilora": lambda k, d: d,
        "lora": lambda k, d: k + d,
        "dora": lambda k, d: d + k + d,
        "vera": lambda k, d: 1 + d,
        "mora1": lambda k, d: round(np.sqrt(d)) ** 2,
        "mora6": lambda k, d: round(np.sqrt(d)) ** 2,
        "bitfit": lambda k, d: d,
        "difffit": lambda k, d: 2 * d,
        "all": lambda k, d: k * d + d,
    }

    def test_reference_widths(self):
        k = d = 768
        expected = {"ilora": 768, "lora": 1536, "dora": 2304, "vera": 769,
                    "mora1": 784, "mora6": 784, "bitfit": 768, "difffit": 1536,
                    "all": 768 * 768 + 768}
        for name, want in expected.items():
            assert param_count(AdapterKind(name), k, d) == want

    def test_formulas_on_grid(self):
        for k in list(range(2, 10)) + [768]:
            for d in list(range(2, 10)) + [768]:
                for name, formula in self.FORMULAS.items():
                    assert param_count(AdapterKind(name), k, d) == formula(k, d), (name, k, d)

    def test_ordering(self):
        # dora and all tie at exactly k=d=2 (both 6 by the table formulas);
        # the chain is strict everywhere else
        for k in range(2, 12):
            for d in range(2, 12):
                counts = {name: param_count(AdapterKind(name), k, d)
                          for name in ("ilora", "bitfit", "vera", "lora", "dora", "all")}
                assert counts["ilora"] == counts["bitfit"]
                assert counts["bitfit"] < counts["vera"] < counts["lora"] < counts["dora"]
                if (k, d) == (2, 2):
                    assert counts["dora"] == counts["all"]
                else:
                    assert counts["dora"] < counts["all"]

    def test_state_matches_count(self):
        for k, d in ALL_DIMS:
            W0, _ = layer_setup(k, d)
            for name in METHOD_NAMES:
                a = fresh(name, k, d, W0=W0)
                total = sum(v.size for v in a.trainables.values())
                assert total == param_count(a.kind, k, d)


class TestMakeAdapter:
    def test_ilora_is_zero_vector(self):
        a = fresh("ilora", 3, 2)
        assert set(a.trainables) == {"b"}
        np.testing.assert_array_equal(a.trainables["b"], np.zeros(2))

    def test_vera_layout(self):
        a = fresh("vera", 4, 4)
        np.testing.assert_array_equal(a.trainables["d_vec"], [0.1])
        np.testing.assert_array_equal(a.trainables["b"], np.zeros(4))
        assert a.frozen["A"].shape == (1, 4) and a.frozen["B"].shape == (4, 1)
        assert np.linalg.norm(a.frozen["A"]) > 0 and np.linalg.norm(a.frozen["B"]) > 0

    def test_vera_frozen_shared_across_same_shapes(self):
        a = fresh("vera", 6, 3, seed=5)
        b = fresh("vera", 6, 3, seed=5)
        np.testing.assert_array_equal(a.frozen["A"], b.frozen["A"])

    def test_lora_b_zero(self):
        a = fresh("lora", 5, 3)
        assert a.trainables["A"].shape == (1, 5)
        np.testing.assert_array_equal(a.trainables["B"], np.zeros((3, 1)))

    def test_dora_needs_w0(self):
        with pytest.raises(ValueError):
            fresh("dora", 4, 4)

    def test_dora_magnitude_is_row_norms(self):
        W0, _ = layer_setup(6, 4)
        a = fresh("dora", 6, 4, W0=W0)
        np.testing.assert_array_equal(a.trainables["magnitude"], np.linalg.norm(W0, axis=1))

    def test_rejects_zero_widths(self):
        with pytest.raises(ValueError):
            fresh("ilora", 0, 4)

    def test_random_compression_norm(self):
        a = fresh("ilora_rand", 9, 4)
        assert np.isclose(np.linalg.norm(a.frozen["compress"]), 3.0)


class TestForward:
    def test_zero_shift_at_init_exact(self):
        for k, d in ALL_DIMS:
            W0, beta0 = layer_setup(k, d)
            x = Rng(2, 2).normal(k)
            for name in METHOD_NAMES:
                a = fresh(name, k, d, W0=W0)
                np.testing.assert_array_equal(forward(a, W0, beta0, x), W0 @ x + beta0)

    def test_ilora_hand_example(self):
        # identity base, b = (1, -1), x = (2, 3): feature sum 5 shifts to (7, -2)
        a = fresh("ilora", 2, 2)
        a.trainables["b"][:] = [1.0, -1.0]
        out = forward(a, np.eye(2), np.zeros(2), [2.0, 3.0])
        np.testing.assert_allclose(out, [7.0, -2.0])

    def test_bitfit_constant_shift(self):
        a = fresh("bitfit", 3, 2)
        a.trainables["beta"][:] = 1.0
        for x in ([0.0, 0.0, 0.0], [5.0, -3.0, 2.0]):
            np.testing.assert_array_equal(
                forward(a, np.zeros((2, 3)), np.zeros(2), x), [1.0, 1.0])

    def test_ilora_shift_permutation_invariant(self):
        k, d = 8, 5
        W0, beta0 = layer_setup(k, d)
        a, _, _ = randomized("ilora", k, d)
        x = Rng(3, 2).normal(k)
        perm = np.argsort(Rng(4, 2).uniform(0, 1, k))
        shift = forward(a, W0, beta0, x) - (W0 @ x + beta0)
        shift_perm = forward(a, W0, beta0, x[perm]) - (W0 @ x[perm] + beta0)
        np.testing.assert_allclose(shift, shift_perm, atol=1e-12)

    def test_shape_errors(self):
        a = fresh("ilora", 3, 2)
        W0, beta0 = layer_setup(3, 2)
        with pytest.raises(ShapeError):
            forward(a, W0, beta0, np.ones(4))
        with pytest.raises(ShapeError):
            forward(a, np.ones((2, 4)), beta0, np.ones(3))

    def test_matches_merged_linear_map(self):
        # forward must stay linear in x at any parameter state
        for name in METHOD_NAMES:
            a, W0, beta0 = randomized(name, 6, 4, seed=3)
            x = Rng(5, 2).normal(6)
            y = Rng(6, 2).normal(6)
            fx = forward(a, W0, beta0, x)
            fy = forward(a, W0, beta0, y)
            fxy = forward(a, W0, beta0, x + y)
            f0 = forward(a, W0, beta0, np.zeros(6))
            np.testing.assert_allclose(fxy, fx + fy - f0, atol=1e-10)


class TestBackward:
    def test_ilora_hand_example(self):
        a = fresh("ilora", 2, 2)
        W0, _ = layer_setup(2, 2)
        bundle = backward(a, W0, [2.0, 3.0], [1.0, 0.0])
        np.testing.assert_allclose(bundle.grads["b"], [5.0, 0.0])

    def test_ilora_input_gradient_formula(self):
        a, W0, _ = randomized("ilora", 4, 3)
        x = Rng(8, 2).normal(4)
        g = Rng(9, 2).normal(3)
        bundle = backward(a, W0, x, g)
        expected = W0.T @ g + np.ones(4) * float(a.trainables["b"] @ g)
        np.testing.assert_allclose(bundle.g_in, expected, atol=1e-12)

    def test_lora_zero_b_blocks_a_path(self):
        a = fresh("lora", 5, 3)
        W0, _ = layer_setup(5, 3)
        x = Rng(1, 2).normal(5)
        g = Rng(2, 2).normal(3)
        bundle = backward(a, W0, x, g)
        np.testing.assert_array_equal(bundle.grads["A"], np.zeros((1, 5)))
        np.testing.assert_allclose(bundle.grads["B"],
                                   np.outer(g, a.trainables["A"] @ x), atol=1e-12)

    def test_input_gradient_matches_fd(self):
        h = 1e-6
        for name in METHOD_NAMES:
            a, W0, beta0 = randomized(name, 5, 4, seed=7)
            x = Rng(11, 2).normal(5)
            g = Rng(12, 2).normal(4)
            g_in = backward(a, W0, x, g, beta0).g_in
            for j in range(5):
                xp = x.copy()
                xp[j] += h
                xm = x.copy()
                xm[j] -= h
                num = (g @ forward(a, W0, beta0, xp) - g @ forward(a, W0, beta0, xm)) / (2 * h)
                err = abs(g_in[j] - num) / max(1e-8, abs(g_in[j]) + abs(num))
                assert err <= 1e-6, (name, j, err)

    def test_dora_detached_drops_norm_path(self):
        k, d = 6, 4
        W0, beta0 = layer_setup(k, d)
        full = make_adapter(AdapterKind("dora"), k, d, Rng(0, 1), W0=W0)
        perturb_trainables(full, Rng(50, 1), 0.5)
        detached = make_adapter(AdapterKind("dora", dora_detach_norm=True), k, d, Rng(0, 1), W0=W0)
        for nm in detached.trainables:
            detached.trainables[nm][:] = full.trainables[nm]
        x = Rng(13, 2).normal(k)
        g = Rng(14, 2).normal(d)
        gf = backward(full, W0, x, g)
        gd = backward(detached, W0, x, g)
        np.testing.assert_allclose(gf.grads["magnitude"], gd.grads["magnitude"], atol=1e-12)
        assert not np.allclose(gf.grads["A"], gd.grads["A"])
        np.testing.assert_allclose(gf.g_in, gd.g_in, atol=1e-12)

    def test_shape_errors(self):
        a = fresh("ilora", 3, 2)
        W0, _ = layer_setup(3, 2)
        with pytest.raises(ShapeError):
            backward(a, W0, np.ones(3), np.ones(3))


class TestMerge:
    def test_ilora_rank_one_rows(self):
        a = fresh("ilora", 3, 2)
        a.trainables["b"][:] = [1.0, 2.0]
        W_ft, beta_ft = merge(a, np.zeros((2, 3)), np.zeros(2))
        np.testing.assert_array_equal(W_ft, [[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
        np.testing.assert_array_equal(beta_ft, np.zeros(2))

    def test_fresh_adapter_merges_to_base(self):
        for name in METHOD_NAMES:
            W0, beta0 = layer_setup(6, 5)
            a = fresh(name, 6, 5, W0=W0)
            W_ft, beta_ft = merge(a, W0, beta0)
            np.testing.assert_allclose(W_ft, W0, atol=1e-12)
            np.testing.assert_allclose(beta_ft, beta0, atol=1e-12)

    def test_equivalence_random_states(self):
        # randomized states, 100 random inputs per method
        for name in METHOD_NAMES:
            for k, d in [(9, 6), (6, 9), (13, 13)]:
                a, W0, beta0 = randomized(name, k, d, seed=17)
                W_ft, beta_ft = merge(a, W0, beta0)
                X = Rng(23, 2).normal_matrix(100, k)
                merged = X @ W_ft.T + beta_ft
                adapted = forward_batch(a, W0, beta0, X)
                assert np.abs(merged - adapted).max() <= 1e-10, (name, k, d)


class TestFlopCount:
    def test_reference_values(self):
        assert flop_count(AdapterKind("ilora"), 768, 768) == (768, 767 + 768)
        assert flop_count(AdapterKind("lora"), 768, 768)[0] == 1536
        assert flop_count(AdapterKind("bitfit"), 768, 768) == (0, 768)

    def test_ilora_beats_lora_everywhere(self):
        for k in range(1, 50):
            for d in (1, 3, 17, 768):
                assert flop_count(AdapterKind("ilora"), k, d)[0] < flop_count(AdapterKind("lora"), k, d)[0]

    def test_mult_ordering_chain(self):
        for k in list(range(2, 40)) + [768]:
            for d in list(range(2, 40)) + [768]:
                m_i = flop_count(AdapterKind("ilora"), k, d)[0]
                m_l = flop_count(AdapterKind("lora"), k, d)[0]
                m_d = flop_count(AdapterKind("dora"), k, d)[0]
                assert m_i < m_l < m_d, (k, d)

    def test_random_compression_costs_more_mults(self):
        sum_m = flop_count(AdapterKind("ilora"), 24, 24)
        rand_m = flop_count(AdapterKind("ilora", compression="random"), 24, 24)
        assert rand_m[0] > sum_m[0] and rand_m[1] == sum_m[1]


class TestBatchedConsistency:
    def test_forward_and_backward_match_per_sample(self):
        n = 6
        for name in METHOD_NAMES:
            for k, d in [(7, 5), (4, 9)]:
                a, W0, beta0 = randomized(name, k, d, seed=29)
                X = Rng(31, 2).normal_matrix(n, k)
                G = Rng(37, 2).normal_matrix(n, d)
                batch_out = forward_batch(a, W0, beta0, X)
                bundle = backward_batch(a, W0, X, G, beta0)
                acc = {nm: np.zeros_like(v) for nm, v in a.trainables.items()}
                for i in range(n):
                    np.testing.assert_allclose(batch_out[i], forward(a, W0, beta0, X[i]),
                                               atol=1e-12)
                    single = backward(a, W0, X[i], G[i], beta0)
                    np.testing.assert_allclose(bundle.g_in[i], single.g_in, atol=1e-12)
                    for nm in acc:
                        acc[nm] += single.grads[nm]
                for nm in acc:
                    np.testing.assert_allclose(bundle.grads[nm], acc[nm], atol=1e-10)


class TestKindParsing:
    def test_all_names_resolve(self):
        for name in METHOD_NAMES:
            kind_from_name(name)

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            kind_from_name("qlora")

    def test_bad_kind_fields(self):
        with pytest.raises(ValueError):
            AdapterKind("lora", rank=0)
        with pytest.raises(ValueError):
            AdapterKind("ilora", compression="hash")

    def test_kinds_cover_table(self):
        assert set(KINDS) == {"ilora", "lora", "dora", "vera", "mora1", "mora6",
                              "bitfit", "difffit", "all"}
