import numpy as np
import pytest
from conftest import numeric_gradients

from lightmc import codebook, softmax_decoder as sd
from lightmc.errors import (
    DimensionMismatch,
    IndexOutOfRange,
    InvalidArg,
    NonFiniteInput,
    ParseError,
)


def assert_close_rel(analytic, numeric, tol=1e-4):
    denom = np.maximum(np.abs(numeric), 1e-6)
    assert np.all(np.abs(analytic - numeric) <= tol * (denom + 1e-6)), (
        analytic,
        numeric,
    )


class TestInitFromMatrix:
    def test_copies_matrix_and_sets_biases(self):
        m = codebook.init_random(3, 4, seed=1)
        params = sd.init_from_matrix(m)
        assert np.array_equal(params.weights, m.entries)
        assert np.array_equal(params.biases, np.array([4.0, 4.0, 4.0]))

    def test_mutation_does_not_touch_source(self):
        m = codebook.init_random(3, 4, seed=1)
        params = sd.init_from_matrix(m)
        params.weights[0, 0] = 99.0
        assert m.entries[0, 0] in (-1.0, 1.0)

    def test_matches_hamming_decode_on_sign_outputs(self):
        rng = np.random.default_rng(5)
        for _ in range(60):
            k = int(rng.integers(3, 10))
            length = int(rng.integers(codebook.min_feasible_code_length(k), 10))
            m = codebook.init_random(k, length, seed=int(rng.integers(1 << 30)))
            params = sd.init_from_matrix(m)
            o = rng.choice([-1.0, 1.0], size=length)
            dist = 0.5 * np.abs(m.entries - o).sum(axis=1)
            if (dist == dist.min()).sum() != 1:
                continue
            assert sd.decode(params, o).predicted == codebook.hamming_decode(m, o)


class TestDecode:
    def test_zero_weights_give_uniform(self):
        params = sd.DecoderParams(np.zeros((5, 3)), np.full(5, 2.0))
        result = sd.decode(params, np.array([0.3, -0.4, 2.0]))
        np.testing.assert_allclose(result.probabilities, 0.2, atol=1e-12)

    def test_own_codeword_scores_code_length(self):
        m = codebook.init_random(5, 6, seed=3)
        params = sd.init_from_matrix(m)
        for k in range(5):
            result = sd.decode(params, m.entries[k])
            assert result.scores[k] == pytest.approx(6.0)
            assert result.scores.max() == pytest.approx(6.0)
            assert result.predicted == k

    def test_score_shift_leaves_probabilities(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(4, 3))
        o = rng.normal(size=3)
        base = sd.decode(sd.DecoderParams(w, np.zeros(4)), o)
        shifted = sd.decode(sd.DecoderParams(w, np.full(4, 7.0)), o)
        np.testing.assert_allclose(
            base.probabilities, shifted.probabilities, atol=1e-12
        )

    def test_probabilities_form_distribution(self):
        rng = np.random.default_rng(8)
        for scale in (1.0, 50.0, 700.0):  # |t| up to ~1e3
            w = rng.normal(size=(6, 4)) * scale
            params = sd.DecoderParams(w, rng.normal(size=6) * scale)
            result = sd.decode(params, rng.normal(size=4))
            assert abs(result.probabilities.sum() - 1.0) < 1e-9
            assert np.all(result.probabilities > 0.0)
            assert np.all(result.probabilities < 1.0)
            assert result.predicted == int(np.argmax(result.probabilities))

    def test_errors(self):
        params = sd.DecoderParams(np.zeros((3, 2)), np.zeros(3))
        with pytest.raises(DimensionMismatch):
            sd.decode(params, np.zeros(4))
        with pytest.raises(NonFiniteInput):
            sd.decode(params, np.array([1.0, np.nan]))


class TestLoss:
    def test_perfect_prediction_is_near_zero(self):
        p = np.zeros(6)
        p[2] = 1.0
        assert sd.loss(p, 2) < 1e-10

    def test_two_class_uniform_value(self):
        assert sd.loss(np.array([0.5, 0.5]), 0) == pytest.approx(2 * np.log(2))

    def test_decreases_as_label_mass_grows(self):
        # grid oracle: remaining mass stays proportional across other classes
        base = np.array([0.1, 0.3, 0.6])
        losses = []
        for p_label in np.linspace(0.05, 0.95, 10):
            rest = base[1:] / base[1:].sum() * (1.0 - p_label)
            losses.append(sd.loss(np.concatenate(([p_label], rest)), 0))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_label_bounds(self):
        with pytest.raises(IndexOutOfRange):
            sd.loss(np.array([0.5, 0.5]), 2)


class TestLossGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            k = int(rng.integers(3, 8))
            length = int(rng.integers(2, 6))
            params = sd.DecoderParams(
                rng.normal(size=(k, length)), rng.normal(size=k)
            )
            o = rng.normal(size=length)
            label = int(rng.integers(k))
            analytic = sd.loss_gradients(params, o, label)
            numeric = numeric_gradients(params, o, label)
            for a, n in zip(analytic, numeric):
                assert_close_rel(a, n)

    def test_zero_weights_kill_output_gradient(self):
        params = sd.DecoderParams(np.zeros((4, 3)), np.full(4, 1.0))
        _, _, grad_o = sd.loss_gradients(params, np.array([0.5, -1.0, 2.0]), 1)
        assert np.array_equal(grad_o, np.zeros(3))

    def test_bias_shift_invariance(self):
        rng = np.random.default_rng(23)
        w = rng.normal(size=(5, 4))
        b = rng.normal(size=5)
        o = rng.normal(size=4)
        g1 = sd.loss_gradients(sd.DecoderParams(w, b), o, 2)
        g2 = sd.loss_gradients(sd.DecoderParams(w, b + 11.0), o, 2)
        for a, bb in zip(g1, g2):
            np.testing.assert_allclose(a, bb, atol=1e-12)

    def test_batch_output_gradients_match_per_instance(self):
        rng = np.random.default_rng(31)
        params = sd.DecoderParams(rng.normal(size=(4, 3)), rng.normal(size=4))
        outputs = rng.normal(size=(6, 3))
        labels = rng.integers(0, 4, size=6)
        batch = sd.output_gradients(params, outputs, labels)
        for i in range(6):
            _, _, grad_o = sd.loss_gradients(params, outputs[i], int(labels[i]))
            np.testing.assert_allclose(batch[i], grad_o, atol=1e-12)

    def test_mean_loss_matches_loop(self):
        rng = np.random.default_rng(37)
        params = sd.DecoderParams(rng.normal(size=(5, 4)), rng.normal(size=5))
        outputs = rng.normal(size=(8, 4))
        labels = rng.integers(0, 5, size=8)
        per = [
            sd.loss(sd.decode(params, outputs[i]).probabilities, int(labels[i]))
            for i in range(8)
        ]
        assert sd.mean_loss(params, outputs, labels) == pytest.approx(np.mean(per))


class TestTrainDecoding:
    def _random_problem(self, seed, n=40, k=5, length=4):
        rng = np.random.default_rng(seed)
        params = sd.DecoderParams(rng.normal(size=(k, length)), rng.normal(size=k))
        outputs = rng.normal(size=(n, length))
        labels = rng.integers(0, k, size=n)
        return params, outputs, labels

    def test_full_batch_step_descends(self):
        for seed in range(10):
            params, outputs, labels = self._random_problem(seed)
            before = sd.mean_loss(params, outputs, labels)
            lr = 1e-3
            for _ in range(10):
                after = sd.mean_loss(
                    sd.train_decoding(
                        params, outputs, labels, lr, batch_size=len(labels), epochs=1
                    ),
                    outputs,
                    labels,
                )
                if after < before:
                    break
                lr *= 0.5
            assert after < before

    def test_zero_epochs_returns_unchanged(self):
        params, outputs, labels = self._random_problem(3)
        updated = sd.train_decoding(params, outputs, labels, 0.1, epochs=0)
        assert np.array_equal(updated.weights, params.weights)
        assert np.array_equal(updated.biases, params.biases)

    def test_input_params_never_mutated(self):
        params, outputs, labels = self._random_problem(4)
        snapshot = params.copy()
        sd.train_decoding(params, outputs, labels, 0.1, epochs=2)
        assert np.array_equal(params.weights, snapshot.weights)
        assert np.array_equal(params.biases, snapshot.biases)

    def test_seeded_determinism(self):
        params, outputs, labels = self._random_problem(5)
        a = sd.train_decoding(params, outputs, labels, 0.1, batch_size=8, epochs=3, seed=9)
        b = sd.train_decoding(params, outputs, labels, 0.1, batch_size=8, epochs=3, seed=9)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)

    def test_validation_errors(self):
        params, outputs, labels = self._random_problem(6)
        with pytest.raises(DimensionMismatch):
            sd.train_decoding(params, outputs[:, :2], labels, 0.1)
        with pytest.raises(InvalidArg):
            sd.train_decoding(params, outputs, labels, -0.1)
        with pytest.raises(InvalidArg):
            sd.train_decoding(params, outputs, labels, 0.1, batch_size=0)

    def test_l2_shrinks_weight_norm_at_optimum_scale(self):
        params, outputs, labels = self._random_problem(7)
        plain = sd.train_decoding(params, outputs, labels, 0.05, epochs=5, l2=0.0, seed=1)
        reg = sd.train_decoding(params, outputs, labels, 0.05, epochs=5, l2=1.0, seed=1)
        assert np.linalg.norm(reg.weights) < np.linalg.norm(plain.weights)


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(41)
        params = sd.DecoderParams(rng.normal(size=(4, 6)), rng.normal(size=4))
        path = tmp_path / "decoder.txt"
        sd.save_params(params, path)
        again = sd.load_params(path)
        assert np.array_equal(params.weights, again.weights)
        assert np.array_equal(params.biases, again.biases)
        assert path.read_text().splitlines()[0] == "lightmc-decoder v1 4 6"

    def test_rejects_corrupt_file(self, tmp_path):
        path = tmp_path / "decoder.txt"
        path.write_text("lightmc-decoder v1 4 6\n1 2 3\n")
        with pytest.raises(ParseError):
            sd.load_params(path)
