import math

import numpy as np
import pytest

from gkgrec.recommender import (PreferencePair, RecContext, SurrogateScorer, letters_to_distribution,
                                llm_predict, mine_hard_negatives, predict, preference_loss, rank_of,
                                refresh_reference)

from oracles import central_difference


def unit_rows(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def test_scorer_distribution_and_state(rng):
    s = SurrogateScorer(6, 2.0)
    z, cands = unit_rows(rng, 6), unit_rows(rng, 20, 6)
    p = s.distribution(z, cands)
    assert p.shape == (20,) and p.sum() == pytest.approx(1.0)
    assert np.allclose(s.logits(z, cands), 2.0 * cands @ z)
    t = SurrogateScorer(6)
    t.load_state_dict(s.state_dict())
    assert np.array_equal(t.w, s.w)
    with pytest.raises(ValueError):
        t.load_state_dict({"w": np.ones(5)})


def test_predict_and_rank():
    ctx = RecContext(np.array([1.0, 0]), np.array([[0, 1.0], [1.0, 0], [1.0, 0]]),
                     np.array([7, 8, 9]), 2)
    p, pred = predict(SurrogateScorer(2, 1.0), ctx)
    assert pred == 1  # first of the tied maxima
    assert rank_of(p, 2) == 2 and rank_of(p, 1) == 1 and rank_of(p, 0) == 3
    with pytest.raises(ValueError):
        RecContext(np.zeros(2), np.zeros((2, 2)), np.array([1, 1]), 0)
    with pytest.raises(ValueError):
        RecContext(np.zeros(2), np.zeros((2, 2)), np.array([1, 2]), 2)


def test_hard_negatives_are_the_top_non_targets():
    p = np.array([0.1, 0.4, 0.2, 0.2, 0.1])
    assert mine_hard_negatives(p, 1, 3).tolist() == [2, 3, 0]
    with pytest.raises(ValueError):
        mine_hard_negatives(p, 1, 5)


def test_preference_loss_is_ln2_at_the_reference(rng):
    for _ in range(20):
        s = SurrogateScorer(5)
        s.params["w"] = rng.normal(size=5) * 3
        pairs = [PreferencePair(*unit_rows(rng, 3, 5)) for _ in range(4)]
        loss, grad = preference_loss(s, refresh_reference(s), pairs, 0.2)
        assert abs(loss - math.log(2)) <= 1e-9


def test_preference_gradient_matches_finite_differences(rng):
    for _ in range(100):
        d = int(rng.integers(2, 8))
        s, ref = SurrogateScorer(d), SurrogateScorer(d)
        s.params["w"] = rng.normal(size=d) * 5
        ref.params["w"] = rng.normal(size=d) * 5
        zc, zp = unit_rows(rng, 6, d), unit_rows(rng, 6, d)
        zn = unit_rows(rng, 6, d)
        beta = float(rng.uniform(0.05, 1.0))
        _, grad = preference_loss(s, ref, (zc, zp, zn), beta)

        def f(w):
            t = SurrogateScorer(d)
            t.params["w"] = w
            return preference_loss(t, ref, (zc, zp, zn), beta)[0]

        num = central_difference(f, s.w.copy())
        rel = np.linalg.norm(grad["w"] - num) / max(np.linalg.norm(num), 1e-12)
        assert rel <= 1e-4


def test_grouped_flat_and_list_inputs_agree(rng):
    s, ref = SurrogateScorer(4), SurrogateScorer(4)
    s.params["w"] = rng.normal(size=4)
    zc, zp, zn = unit_rows(rng, 3, 4), unit_rows(rng, 3, 4), unit_rows(rng, 3, 5, 4)
    g_loss, g_grad = preference_loss(s, ref, (zc, zp, zn), 0.3)
    flat = (np.repeat(zc, 5, axis=0), np.repeat(zp, 5, axis=0), zn.reshape(-1, 4))
    f_loss, f_grad = preference_loss(s, ref, flat, 0.3)
    pairs = [PreferencePair(a, b, c) for a, b, c in zip(*flat)]
    l_loss, l_grad = preference_loss(s, ref, pairs, 0.3)
    assert g_loss == pytest.approx(f_loss, abs=1e-12) == pytest.approx(l_loss, abs=1e-12)
    assert np.allclose(g_grad["w"], f_grad["w"], atol=1e-12)
    assert np.allclose(l_grad["w"], f_grad["w"], atol=1e-12)


def test_preference_step_raises_the_target_margin(rng):
    s = SurrogateScorer(8, 1.0)
    ref = refresh_reference(s)
    zc, zp, zn = unit_rows(rng, 8), unit_rows(rng, 8), unit_rows(rng, 8)
    before = s.log_probs(zc, np.stack([zp, zn]))
    _, g = preference_loss(s, ref, (zc[None], zp[None], zn[None]), 0.2)
    s.params["w"] -= 10.0 * g["w"]
    after = s.log_probs(zc, np.stack([zp, zn]))
    assert after[0] - after[1] > before[0] - before[1]


def test_preference_loss_rejects_bad_beta(rng):
    s = SurrogateScorer(2)
    with pytest.raises(ValueError):
        preference_loss(s, s, (np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2))), 0.0)


def test_letters_to_distribution():
    p = letters_to_distribution({"A": math.log(0.5), "C": math.log(0.25)}, 4)
    assert p.sum() == pytest.approx(1.0)
    assert p[0] == pytest.approx(2 * p[2]) and p[1] < 1e-6
    q = letters_to_distribution({"B": 3.0}, 3, are_logprobs=False)
    assert np.argmax(q) == 1


class FakeChat:
    def __init__(self, replies=(), logprobs=None):
        self.replies = list(replies)
        self.lp = logprobs
        self.calls = 0

    def letter_logprobs(self, prompt):
        return self.lp

    def complete(self, prompt, temperature=0.0):
        self.calls += 1
        return self.replies.pop(0) if self.replies else "no idea"


def test_llm_predict_prefers_logprobs():
    p = llm_predict(FakeChat(logprobs={"B": -0.1, "A": -3.0}), ["Heat"], ["x", "y", "z"], None)
    assert np.argmax(p) == 1


def test_llm_predict_counts_sampled_letters():
    chat = FakeChat(["B", "Answer: C", "C. Ran", "???", "junk"] + ["C"] * 10)
    p = llm_predict(chat, ["Heat"], ["x", "y", "z"], "facts", n_samples=4)
    assert np.argmax(p) == 2 and p[1] > p[0]


def test_llm_predict_miss_and_out_of_range_letter():
    assert llm_predict(FakeChat(["T"] * 20), ["Heat"], ["x", "y"], None, n_samples=3) is None
