"""Interpolation ensembling and single-model beam search."""

import math

import numpy as np
import pytest

from abe.baseline import InterpolationEnsemble, decode_single, interpolate_step
from abe.decoder import EnsembleConfig, decode
from abe.model import ModelState, step
from abe.oracle import enumerate_joint
from abe.testing import make_chain_model, make_random_ngram, make_tree_model

from conftest import scenario


def two_models(p1, p2):
    m1 = scenario(["a", "b"], {(): {"a": p1[0], "b": p1[1]}}, default={"</s>": 1.0})
    m2 = scenario(["a", "b"], {(): {"a": p2[0], "b": p2[1]}}, default={"</s>": 1.0})
    return m1, m2


class TestInterpolateStep:
    def test_weighted_sum_in_probability_space(self):
        m1, m2 = two_models((0.8, 0.2), (0.4, 0.6))
        ens = InterpolationEnsemble([m1, m2], [0.5, 0.5])
        probs = np.exp(ens.next_logprobs([]))
        np.testing.assert_allclose(probs[:2], [0.6, 0.4], atol=1e-12)

    def test_degenerate_weights_reproduce_model_one_exactly(self):
        m1, m2 = two_models((0.8, 0.2), (0.4, 0.6))
        ens = InterpolationEnsemble([m1, m2], [1.0, 0.0])
        np.testing.assert_array_equal(ens.next_logprobs([]), m1.next_logprobs([]))

    def test_idempotent_on_identical_distributions(self):
        m1, m2 = two_models((0.8, 0.2), (0.8, 0.2))
        ens = InterpolationEnsemble([m1, m2], [0.5, 0.5])
        np.testing.assert_allclose(
            ens.next_logprobs([]), m1.next_logprobs([]), atol=1e-12
        )

    def test_arithmetic_not_geometric_mixture(self):
        m1, m2 = two_models((0.9, 0.1), (0.5, 0.5))
        ens = InterpolationEnsemble([m1, m2], [0.5, 0.5])
        probs = np.exp(ens.next_logprobs([]))
        np.testing.assert_allclose(probs[:2], [0.7, 0.3], atol=1e-12)
        geometric = np.sqrt([0.9 * 0.5, 0.1 * 0.5])
        geometric = geometric / geometric.sum()
        assert abs(probs[0] - geometric[0]) > 0.01

    def test_sorted_step_result(self):
        m1, m2 = two_models((0.2, 0.8), (0.4, 0.6))
        ens = InterpolationEnsemble([m1, m2], [0.5, 0.5])
        sr = interpolate_step(ens, ModelState())
        assert [int(i) for i in sr.ids[:2]] == [1, 0]  # mixture prefers b
        np.testing.assert_allclose(np.exp(sr.totals[:2]), [0.7, 0.3], atol=1e-12)

    def test_distribution_sums_to_one(self, rng):
        for _ in range(10):
            m = make_random_ngram(rng, identity="m1")
            m2 = make_random_ngram(rng, identity="m2")
            if m.vocabulary != m2.vocabulary:
                continue
            lam = float(rng.uniform(0, 1))
            ens = InterpolationEnsemble([m, m2], [lam, 1 - lam])
            total = float(np.exp(ens.next_logprobs([])).sum())
            assert abs(total - 1.0) < 1e-6

    def test_vocabulary_mismatch_is_a_configuration_error(self):
        m1 = scenario(["a"], {(): {"a": 1.0}})
        m2 = scenario(["b"], {(): {"b": 1.0}})
        with pytest.raises(ValueError):
            InterpolationEnsemble([m1, m2])

    def test_state_mismatch_is_a_usage_error(self):
        m1, m2 = two_models((0.8, 0.2), (0.4, 0.6))
        ens = InterpolationEnsemble([m1, m2])
        with pytest.raises(ValueError):
            interpolate_step(ens, [ModelState(token_ids=(0,)), ModelState()])

    def test_per_model_states_accepted_when_aligned(self):
        m1, m2 = two_models((0.8, 0.2), (0.4, 0.6))
        ens = InterpolationEnsemble([m1, m2])
        sr = interpolate_step(ens, [ModelState(), ModelState()])
        assert len(sr) == ens.vocabulary.size


class TestDecodeSingle:
    def test_deterministic_chain(self):
        m = make_chain_model(b" ab", [b" a", b"b"])
        out = decode_single(m, beam_size=5, max_len=8)
        assert out[0].text == b" ab"

    def test_beam_one_is_greedy_argmax_rollout(self):
        m = scenario(
            ["a", "b"],
            {
                (): {"a": 0.6, "b": 0.4},
                (0,): {"a": 0.1, "b": 0.5, "</s>": 0.4},
                (0, 1): {"</s>": 1.0},
            },
            default={"</s>": 1.0},
        )
        # Manual argmax rollout: a (0.6), then b (0.5), then eos.
        out = decode_single(m, beam_size=1, max_len=8)
        assert out[0].token_ids == ((0, 1, 2),)
        expected = (math.log(0.6) + math.log(0.5) + math.log(1.0)) / 3
        assert out[0].score == pytest.approx(expected, abs=1e-12)

    def test_matches_exhaustive_enumeration_on_tree_models(self, rng):
        for _ in range(20):
            m = make_tree_model(rng, max_leaves=5)
            got = decode_single(m, beam_size=5, max_len=8)
            want = enumerate_joint([m], max_len=8, top=5).ranked
            assert [h.text for h in got] == [h.text for h in want]
            for g, w in zip(got, want):
                assert g.score == pytest.approx(w.score, abs=1e-9)
                assert g.token_ids == w.token_ids

    def test_empty_fallback_when_nothing_terminates(self):
        m = scenario(["a"], {(): {"a": 1.0}}, default={"a": 1.0})
        out = decode_single(m, beam_size=2, max_len=3)
        assert out[0].fallback

    def test_single_model_reduction_cross_check(self, rng):
        for _ in range(10):
            m = make_random_ngram(rng)
            single = decode_single(m, beam_size=5, max_len=6)
            reduced = decode([m], config=EnsembleConfig(beam_size=5, max_len=6))
            assert [h.text for h in single] == [h.text for h in reduced]
            for a, b in zip(single, reduced):
                assert a.score == pytest.approx(b.score, abs=1e-9)


class TestInterpolatedDecoding:
    def test_identical_adapters_equal_single_decode(self, rng):
        m = make_random_ngram(rng)
        ens = InterpolationEnsemble([m, m], [0.5, 0.5])
        mixed = decode_single(ens, beam_size=3, max_len=6)
        plain = decode_single(m, beam_size=3, max_len=6)
        assert [h.text for h in mixed] == [h.text for h in plain]
        for a, b in zip(mixed, plain):
            assert a.score == pytest.approx(b.score, abs=1e-12)
