import itertools

import numpy as np
import pytest

from bidiopt.compressors import (
    CompressorSpec,
    RngStream,
    alpha_of,
    apply_compressor,
    decode_pairs,
    encode_pairs,
    expected_density,
    omega_of,
    rand_k,
    scale_to_biased,
    top_k,
)


def _gen(seed=0):
    return np.random.default_rng(seed)


class TestRandK:
    def test_k_equals_d_is_identity(self):
        x = _gen().standard_normal(6)
        out = rand_k(x, 6, _gen(1))
        assert np.array_equal(out, x)

    def test_two_coordinate_enumeration(self):
        # d=2, k=1: the two possible subsets give (2v, 0) and (0, 0);
        # their average is x, matching unbiasedness
        v = 1.7
        x = np.array([v, 0.0])
        seen = set()
        for seed in range(50):
            out = rand_k(x, 1, _gen(seed))
            assert tuple(out) in {(2 * v, 0.0), (0.0, 0.0)}
            seen.add(tuple(out))
        assert len(seen) == 2
        assert np.allclose((np.array([2 * v, 0.0]) + np.array([0.0, 0.0])) / 2, x)

    def test_monte_carlo_mean(self):
        d, k, n_draws = 8, 2, 10**5
        x = _gen(3).standard_normal(d)
        rng = _gen(4)
        acc = np.zeros(d)
        acc_sq = np.zeros(d)
        for _ in range(n_draws):
            out = rand_k(x, k, rng)
            acc += out
            acc_sq += out * out
        mean = acc / n_draws
        var = acc_sq / n_draws - mean**2
        se = np.sqrt(var / n_draws)
        assert np.all(np.abs(mean - x) <= 3 * se + 1e-12)

    def test_variance_ratio(self):
        d, k, n_draws = 16, 4, 10**5
        x = _gen(5).standard_normal(d)
        rng = _gen(6)
        sq = 0.0
        for _ in range(n_draws):
            diff = rand_k(x, k, rng) - x
            sq += diff @ diff
        ratio = sq / n_draws / (x @ x)
        assert abs(ratio - (d / k - 1)) <= 0.05 * (d / k - 1)

    def test_sparsity_and_errors(self):
        x = _gen(7).standard_normal(10)
        out = rand_k(x, 3, _gen(8))
        assert np.count_nonzero(out) <= 3
        with pytest.raises(ValueError):
            rand_k(x, 0, _gen())
        with pytest.raises(ValueError):
            rand_k(x, 11, _gen())


class TestTopK:
    def test_unique_argmax(self):
        assert np.array_equal(top_k(np.array([3.0, -5.0, 1.0]), 1), [0.0, -5.0, 0.0])

    def test_k_equals_d(self):
        x = np.array([1.0, 2.0, -3.0])
        assert np.array_equal(top_k(x, 3), x)

    def test_tie_breaks_to_smaller_index(self):
        assert np.array_equal(top_k(np.array([1.0, 1.0]), 1), [1.0, 0.0])

    def test_contraction_everywhere(self):
        rng = _gen(9)
        for _ in range(500):
            d = rng.integers(2, 20)
            k = int(rng.integers(1, d + 1))
            x = rng.standard_normal(d)
            out = top_k(x, k)
            lhs = np.sum((out - x) ** 2)
            assert lhs <= (1 - k / d) * np.sum(x**2) + 1e-12

    def test_contraction_equality_for_flat_magnitudes(self):
        x = np.array([2.0, -2.0, 2.0, -2.0])
        out = top_k(x, 1)
        assert np.isclose(np.sum((out - x) ** 2), (1 - 1 / 4) * np.sum(x**2))

    def test_optimal_among_k_sparse_selections(self):
        rng = _gen(10)
        for _ in range(30):
            d = int(rng.integers(2, 9))
            k = int(rng.integers(1, d))
            x = rng.standard_normal(d)
            best = min(
                np.sum((x - np.where(np.isin(np.arange(d), subset), x, 0.0)) ** 2)
                for subset in itertools.combinations(range(d), k)
            )
            ours = np.sum((top_k(x, k) - x) ** 2)
            assert ours <= best + 1e-12


class TestSpecAccessors:
    def test_rand_k_cifar_shape(self):
        spec = CompressorSpec.make_rand_k(3072, 1000)
        assert omega_of(spec) == pytest.approx(2.072)
        assert expected_density(spec) == 1000
        with pytest.raises(ValueError):
            alpha_of(spec)

    def test_top_k_full(self):
        spec = CompressorSpec.make_top_k(10, 10)
        assert alpha_of(spec) == 1.0
        with pytest.raises(ValueError):
            omega_of(spec)

    def test_identity(self):
        spec = CompressorSpec.make_identity(5)
        assert omega_of(spec) == 0.0
        assert alpha_of(spec) == 1.0
        assert expected_density(spec) == 5

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            CompressorSpec("rand_k", 4, 5)
        with pytest.raises(ValueError):
            CompressorSpec("nonsense", 4, 1)


class TestScaledToBiased:
    def test_identity_unchanged(self):
        spec = CompressorSpec.make_identity(3)
        assert scale_to_biased(spec) is spec

    def test_rand1_of_2_outputs(self):
        spec = scale_to_biased(CompressorSpec.make_rand_k(2, 1))
        assert alpha_of(spec) == pytest.approx(0.5)
        v = 0.9
        x = np.array([v, 0.0])
        outs = {tuple(apply_compressor(spec, x, _gen(s))) for s in range(40)}
        assert outs == {(v, 0.0), (0.0, 0.0)}

    def test_contraction_monte_carlo(self):
        spec = scale_to_biased(CompressorSpec.make_rand_k(12, 3))
        alpha = alpha_of(spec)
        x = _gen(11).standard_normal(12)
        rng = _gen(12)
        n_draws = 10**4
        vals = np.empty(n_draws)
        for i in range(n_draws):
            diff = apply_compressor(spec, x, rng) - x
            vals[i] = diff @ diff / (x @ x)
        se = vals.std() / np.sqrt(n_draws)
        assert vals.mean() <= (1 - alpha) + 3 * se

    def test_rejects_biased_inner(self):
        with pytest.raises(ValueError):
            scale_to_biased(CompressorSpec.make_top_k(4, 2))


class TestRngStream:
    def test_reproducible_per_label(self):
        s = RngStream(42)
        a = s.generator(1, 7, 0).standard_normal(5)
        b = s.generator(1, 7, 0).standard_normal(5)
        c = s.generator(1, 8, 0).standard_normal(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_labels_give_uncorrelated_streams(self):
        s = RngStream(7)
        n = 10**4
        a = s.generator(0, 0, 0).standard_normal(n)
        pairs = [(0, 0, 1), (0, 1, 0), (1, 0, 0), (3, 5, 1)]
        for w, t, p in pairs:
            b = s.generator(w, t, p).standard_normal(n)
            rho = np.corrcoef(a, b)[0, 1]
            assert abs(rho) <= 0.05

    def test_coin_probability(self):
        s = RngStream(3)
        heads = sum(s.coin(t, 0.3, server_id=9) for t in range(10**4))
        assert abs(heads / 10**4 - 0.3) < 0.02

    def test_negative_label_rejected(self):
        with pytest.raises(ValueError):
            RngStream(0).generator(-1, 0, 0)


def test_pair_encoding_round_trip():
    x = np.zeros(9)
    x[[2, 5, 8]] = [1.5, -2.25, 1e-9]
    blob = encode_pairs(x)
    assert len(blob) == 3 * 12
    assert np.array_equal(decode_pairs(blob, 9), x)
