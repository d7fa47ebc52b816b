import collections
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rirkit import sampling as sp
from rirkit.codec import RvqCodebooks
from rirkit.errors import (
    ConfigurationError,
    DegenerateDistributionError,
    DivergenceError,
    InvalidValueError,
)


# ---------------------------------------------------------------------------
# Score combination
# ---------------------------------------------------------------------------

def test_cfg_identity_at_zero_weight():
    cond = np.array([0.3, -1.2, 4.0])
    out = sp.cfg_combine(cond, np.array([9.0, 9.0, 9.0]), 0.0)
    assert np.array_equal(out, cond)


def test_cfg_arithmetic_example():
    assert sp.cfg_combine([1.0, 2.0], [0.0, 0.0], 1.0).tolist() == [2.0, 4.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=16),
       st.floats(0.0, 10.0))
def test_cfg_cancels_when_cond_equals_uncond(scores, w):
    s = np.asarray(scores)
    assert np.allclose(sp.cfg_combine(s, s, w), s, atol=1e-9)


def test_cfg_shape_mismatch():
    with pytest.raises(InvalidValueError):
        sp.cfg_combine([1.0, 2.0], [1.0], 0.5)


def test_cg_degenerates_to_ar():
    ar = np.array([0.5, -0.5, 2.0])
    assert np.array_equal(sp.cg_combine(ar, [], 1.0), ar)
    zeroed = sp.cg_combine(ar, [(np.ones(3), 0.0), (np.full(3, -4.0), 0.0)], 1.0)
    assert np.allclose(zeroed, ar)


def test_default_weight_table():
    w = sp.default_classifier_weights()
    assert len(w) == 46
    assert abs(w["t30_s"] - 1.0 / math.sqrt(27.0)) < 1e-12
    assert abs(w["edt_s:250hz"] - 1.0 / math.sqrt(27.0)) < 1e-12
    assert abs(w["c80_db"] - 1.0 / math.sqrt(18.0)) < 1e-12
    assert abs(w["d50_pct:8000hz"] - 1.0 / math.sqrt(18.0)) < 1e-12
    assert w["srd_m"] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=8),
       st.floats(-3, 3), st.floats(-3, 3))
def test_cg_linear_in_lambda(scores, lam1, lam2):
    ar = np.asarray(scores)
    terms = [(np.linspace(-1, 1, ar.size), 0.7)]
    combined = sp.cg_combine(ar, terms, lam1 + lam2)
    split = sp.cg_combine(ar, terms, lam1) + lam2 * ar
    assert np.allclose(combined, split, atol=1e-9)


# ---------------------------------------------------------------------------
# Top-k sampling
# ---------------------------------------------------------------------------

def test_topk_argmax():
    scores = np.array([0.1, 5.0, 3.0, -2.0])
    for seed in range(5):
        assert sp.topk_sample(scores, 1, 10.0, seed) == 1


def test_topk_uniform_frequencies():
    rng = np.random.default_rng(0)
    draws = [sp.topk_sample(np.zeros(8), 8, 1.0, rng) for _ in range(10000)]
    counts = collections.Counter(draws)
    expected = 10000 / 8
    sigma = math.sqrt(10000 * (1 / 8) * (7 / 8))
    for token in range(8):
        assert abs(counts[token] - expected) < 3 * sigma


def test_topk_low_temperature_is_argmax():
    scores = np.array([0.0, 0.3, 0.1, 0.2])
    hits = sum(sp.topk_sample(scores, 4, 0.01, seed) == 1 for seed in range(300))
    assert hits / 300 > 0.99


def test_topk_degenerate_distribution():
    with pytest.raises(DegenerateDistributionError):
        sp.topk_sample(np.full(4, -np.inf), 4, 1.0, 0)
    with pytest.raises(InvalidValueError):
        sp.topk_sample(np.zeros(4), 0, 1.0, 0)


def test_topk_reproducible():
    scores = np.random.default_rng(1).standard_normal(32)
    a = [sp.topk_sample(scores, 8, 0.7, np.random.default_rng(9)) for _ in range(5)]
    b = [sp.topk_sample(scores, 8, 0.7, np.random.default_rng(9)) for _ in range(5)]
    assert a == b


# ---------------------------------------------------------------------------
# Autoregressive generation
# ---------------------------------------------------------------------------

class DominantModel:
    """Assigns overwhelming score to a position-dependent ground truth."""

    def __init__(self, truth):
        self.truth = truth

    def __call__(self, prefix, condition):
        scores = np.full(4, -1e9)
        scores[self.truth[len(prefix)]] = 1e9
        return scores


def test_ar_follows_dominant_model():
    truth = [0, 2, 1, 3, 3, 0]
    cfg = sp.GuidanceConfig(top_k=4, temperature=1.0)
    for seed in (0, 7, 123):
        out = sp.ar_generate(DominantModel(truth), None, cfg, len(truth), seed)
        assert out.tolist() == truth


def test_ar_output_length_and_unflatten():
    from rirkit.codec import unflatten
    truth = [1, 0, 2, 3] * 6
    cfg = sp.GuidanceConfig(top_k=4, temperature=1.0)
    out = sp.ar_generate(DominantModel(truth), None, cfg, 24, 0)
    assert out.size == 24
    assert unflatten(out, 4).shape == (4, 6)


def test_ar_cfg_queries_unconditional():
    calls = []

    class Probe:
        def __call__(self, prefix, condition):
            calls.append(condition)
            return np.zeros(4)

    cfg = sp.GuidanceConfig(top_k=4, temperature=1.0, cfg_weight=1.5)
    sp.ar_generate(Probe(), "cond", cfg, 3, 0)
    assert calls.count("cond") == 3 and calls.count(None) == 3


def test_ar_model_failure_carries_step():
    class Boom:
        def __call__(self, prefix, condition):
            if len(prefix) == 2:
                raise RuntimeError("kaput")
            return np.zeros(4)

    cfg = sp.GuidanceConfig(top_k=4, temperature=1.0)
    with pytest.raises(sp.SamplingError, match="step 2"):
        sp.ar_generate(Boom(), None, cfg, 5, 0)


def _toy_codebooks():
    vecs = np.zeros((1, 2, 64), dtype=np.float32)
    vecs[0, 1, :] = 1.0  # token 1 = loud frame, token 0 = silence
    return RvqCodebooks(vecs, 8000)


class EnergyClassifier:
    """Oracle: class-1 probability grows with the newest frame's energy."""

    def __call__(self, w):
        p1 = min(max(float(np.mean(w.samples[-64:] ** 2)), 1e-6), 1 - 1e-6)
        return {"energy": np.log(np.array([1.0 - p1, p1]))}


class FlatModel:
    def __call__(self, prefix, condition):
        return np.log(np.array([0.5, 0.5]))


def test_ar_cg_steers_toward_target_class():
    cfg = sp.GuidanceConfig(lam=0.0, classifier_weights={"energy": 8.0},
                            top_k=2, temperature=0.5)
    steps = 0
    hits = 0
    for seed in range(10):
        out = sp.ar_generate(FlatModel(), None, cfg, 10, seed, mode="cg",
                             classifier=EnergyClassifier(), codebooks=_toy_codebooks(),
                             class_targets={"energy": 1})
        steps += out.size
        hits += int(np.sum(out == 1))
    assert hits / steps >= 0.95


def test_ar_cg_requires_classifier():
    cfg = sp.GuidanceConfig()
    with pytest.raises(ConfigurationError):
        sp.ar_generate(FlatModel(), None, cfg, 4, 0, mode="cg")


# ---------------------------------------------------------------------------
# MaskGIT
# ---------------------------------------------------------------------------

def test_mask_schedule_cosine_value():
    counts = sp.MaskSchedule(20).masked_counts(172)
    assert counts[9] == 122 == math.ceil(172 * math.cos(math.pi / 4))
    assert counts[-1] == 0


def test_mask_schedule_strictly_decreasing():
    for steps, frames in ((1, 10), (5, 40), (20, 172), (20, 20)):
        counts = sp.MaskSchedule(steps).masked_counts(frames)
        seq = [frames] + counts
        assert all(a > b for a, b in zip(seq, seq[1:]))
        assert counts[-1] == 0


def test_mask_schedule_too_many_steps():
    with pytest.raises(ConfigurationError):
        sp.MaskSchedule(21).masked_counts(20)


def test_maskgit_oracle_recovery():
    vocab = 11
    target = np.random.default_rng(5).integers(0, vocab, size=(3, 30))
    model = sp.OracleMaskedModel(target, vocab)
    for steps in (1, 5, 20):
        out = sp.maskgit_generate(model, None, 3, 30, sp.MaskSchedule(steps), rng=99)
        assert np.array_equal(out, target)


def test_maskgit_commits_each_frame_exactly_once():
    vocab = 5
    seen_masks = []

    class Recorder:
        def __call__(self, codes, condition):
            seen_masks.append((codes[0] == sp.MASK).copy())
            rngl = np.random.default_rng(len(seen_masks))
            return rngl.standard_normal((2, 9, vocab))

    out = sp.maskgit_generate(Recorder(), None, 2, 9, sp.MaskSchedule(4), rng=1)
    assert np.all(out >= 0)
    # once a frame leaves the mask it never comes back
    for before, after in zip(seen_masks, seen_masks[1:]):
        assert not np.any(after & ~before)
    # stage rows of one frame commit together (frame-level masking)
    assert len({tuple(m.tolist()) for m in seen_masks}) == len(seen_masks)


def test_maskgit_no_mask_left_and_deterministic():
    vocab = 6

    class NoisyModel:
        def __call__(self, codes, condition):
            rngl = np.random.default_rng(int(np.sum(codes >= 0)))
            return rngl.standard_normal((2, 12, vocab))

    a = sp.maskgit_generate(NoisyModel(), None, 2, 12, sp.MaskSchedule(4), rng=3)
    b = sp.maskgit_generate(NoisyModel(), None, 2, 12, sp.MaskSchedule(4), rng=3)
    assert np.array_equal(a, b)
    assert np.all(a >= 0) and np.all(a < vocab)


# ---------------------------------------------------------------------------
# Euler sampler
# ---------------------------------------------------------------------------

def test_euler_constant_field_exact():
    const = lambda x, t, c: np.full_like(x, 2.5)  # noqa: E731
    for steps in (1, 7, 25):
        out = sp.euler_sample(const, np.array([[1.0]]), None, steps)
        assert out[0, 0] == pytest.approx(3.5, abs=1e-9)


def euler_decay_error(steps: int) -> float:
    decay = lambda x, t, c: -x  # noqa: E731
    out = sp.euler_sample(decay, np.array([[1.0]]), None, steps)
    return abs(out[0, 0] - math.exp(-1.0))


def test_euler_decay_matches_recurrence():
    # closed form of the Euler recurrence: (1 - 1/n)^n
    out = sp.euler_sample(lambda x, t, c: -x, np.array([[1.0]]), None, 25)
    assert out[0, 0] == pytest.approx((1 - 1 / 25) ** 25, abs=1e-12)


def test_euler_first_order_convergence():
    e25 = euler_decay_error(25)
    e50 = euler_decay_error(50)
    assert 1.8 <= e25 / e50 <= 2.2


def test_euler_divergence_reports_step():
    def nasty(x, t, c):
        return np.full_like(x, np.nan) if t >= 0.5 else np.zeros_like(x)

    with pytest.raises(DivergenceError, match="step 5"):
        sp.euler_sample(nasty, np.zeros((2, 2)), None, 10)


def test_euler_cfg_on_velocities():
    class CondVel:
        def __call__(self, x, t, condition):
            return np.full_like(x, 2.0 if condition else 1.0)

    out = sp.euler_sample(CondVel(), np.zeros((1, 1)), True, 10, cfg_weight=1.0)
    # (1+w)*2 - w*1 = 3 integrated over unit time
    assert out[0, 0] == pytest.approx(3.0, abs=1e-9)


def test_pull_to_target_lands_on_target():
    target = np.random.default_rng(2).standard_normal((5, 8))
    model = sp.PullToTargetVelocity(target)
    out = sp.euler_sample(model, np.zeros((5, 8)), None, 25)
    assert np.allclose(out, target, atol=1e-9)


# ---------------------------------------------------------------------------
# N-gram reference model
# ---------------------------------------------------------------------------

def test_ngram_repeated_token():
    model = sp.ngram_model([np.array([3, 3, 3, 3])], order=1, vocab_size=5)
    for prefix in ([], [0], [3, 3]):
        assert int(np.argmax(model(np.asarray(prefix), None))) == 3


def test_ngram_scores_normalize():
    model = sp.ngram_model([np.array([0, 1, 2])], order=2, vocab_size=4)
    assert np.exp(model(np.array([1]), None)).sum() == pytest.approx(1.0, abs=1e-9)


def _markov2_corpus(n_seqs, length, vocab, seed):
    """Order-2 chain: strongly prefers next = (prev + 1) mod vocab."""
    rng = np.random.default_rng(seed)
    seqs = []
    for _ in range(n_seqs):
        seq = [int(rng.integers(vocab))]
        for _ in range(length - 1):
            if rng.random() < 0.85:
                seq.append((seq[-1] + 1) % vocab)
            else:
                seq.append(int(rng.integers(vocab)))
        seqs.append(np.array(seq))
    return seqs


def perplexity(model, seqs):
    total, count = 0.0, 0
    for seq in seqs:
        for i, tok in enumerate(seq):
            total += float(model(seq[:i], None)[tok])
            count += 1
    return math.exp(-total / count)


def test_ngram_order2_beats_order1_on_markov2():
    train = _markov2_corpus(20, 60, 6, seed=0)
    held = _markov2_corpus(5, 60, 6, seed=1)
    p1 = perplexity(sp.ngram_model(train, 1, 6), held)
    p2 = perplexity(sp.ngram_model(train, 2, 6), held)
    assert p2 <= p1


def test_ngram_empty_corpus_rejected():
    with pytest.raises(ConfigurationError):
        sp.ngram_model([], order=2, vocab_size=4)
    with pytest.raises(ConfigurationError):
        sp.ngram_model([np.array([1])], order=0, vocab_size=4)


def test_guidance_config_validation():
    with pytest.raises(InvalidValueError):
        sp.GuidanceConfig(temperature=0.0)
    with pytest.raises(InvalidValueError):
        sp.GuidanceConfig(top_k=0)
    with pytest.raises(InvalidValueError):
        sp.GuidanceConfig(cfg_weight=-0.1)
