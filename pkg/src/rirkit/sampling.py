"""Model-agnostic conditioned-generation machinery.

Score combination for classifier-free and classifier guidance, top-k
temperature sampling, autoregressive token generation, masked iterative
(MaskGIT-style) decoding, fixed-step Euler integration of a velocity
field, and desk-scale reference models (n-gram, oracles) for driving the
samplers without a trained network.

Randomness lives only in the samplers; model implementations must be
deterministic functions of their inputs. Every sampler is reproducible
given (inputs, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import codec as cd
from . import params as pm
from .dsp import BandSet, Waveform, estimate_srd, slot_names
from .errors import (
    ConfigurationError,
    DegenerateDistributionError,
    DegenerateSignalError,
    DivergenceError,
    InvalidValueError,
    SamplingError,
)

MASK = -1

#: A score vector is a length-K array of unnormalized log-probabilities.
ScoreVector = np.ndarray


# ---------------------------------------------------------------------------
# Model contracts
# ---------------------------------------------------------------------------

class ARModel(Protocol):
    def __call__(self, prefix: np.ndarray, condition) -> ScoreVector:
        """Scores over the next token given a token prefix; ``condition``
        may be None for the unconditional estimate."""


class ClassifierModel(Protocol):
    def __call__(self, partial: Waveform) -> Mapping[str, np.ndarray]:
        """Per-slot class log-probability vectors for a (partial) waveform."""


class MaskedModel(Protocol):
    def __call__(self, codes: np.ndarray, condition) -> np.ndarray:
        """(L, T, K) scores for a codegram holding MASK sentinels."""


class VelocityModel(Protocol):
    def __call__(self, x: np.ndarray, t: float, condition) -> np.ndarray:
        """Velocity of the latent at time t in [0, 1), same shape as x."""


def default_classifier_weights(bands: BandSet = BandSet()) -> dict[str, float]:
    """Per-slot guidance weights: 1/sqrt(3*Nb) for the reverberation
    times, 1/sqrt(2*Nb) for clarity/definition, 1 for the distance,
    where Nb counts the frequency bands plus broadband."""
    nb = len(bands.centers_hz) + 1
    t_w = 1.0 / math.sqrt(3.0 * nb)
    cd_w = 1.0 / math.sqrt(2.0 * nb)
    weights = {}
    for name in slot_names(bands):
        measure = name.split(":")[0]
        if measure in ("t30_s", "t15_s", "edt_s"):
            weights[name] = t_w
        elif measure in ("c80_db", "d50_pct"):
            weights[name] = cd_w
        else:
            weights[name] = 1.0
    return weights


@dataclass
class GuidanceConfig:
    """Knobs shared by the guided samplers."""

    lam: float = 1.0
    classifier_weights: dict[str, float] = field(default_factory=default_classifier_weights)
    cfg_weight: float = 0.0
    top_k: int = 64
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidValueError("temperature must be positive")
        if self.top_k < 1:
            raise InvalidValueError("top_k must be at least 1")
        if self.cfg_weight < 0:
            raise InvalidValueError("cfg_weight must be non-negative")


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Score combination
# ---------------------------------------------------------------------------

def cfg_combine(cond: ScoreVector, uncond: ScoreVector, w: float) -> ScoreVector:
    """Classifier-free guidance: (1 + w) * cond - w * uncond."""
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise InvalidValueError(
            f"score shape mismatch: {cond.shape} vs {uncond.shape}")
    return (1.0 + w) * cond - w * uncond


def cg_combine(ar: ScoreVector, classifier_terms: Sequence[tuple[ScoreVector, float]],
               lam: float) -> ScoreVector:
    """Classifier guidance in the log domain: lam * ar + sum_k w_k * cls_k.

    No normalization; the result feeds straight into top-k sampling.
    """
    out = lam * np.asarray(ar, dtype=np.float64)
    for scores, w_k in classifier_terms:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != out.shape:
            raise InvalidValueError(
                f"classifier score shape {scores.shape} != {out.shape}")
        out = out + w_k * scores
    return out


def topk_sample(scores: ScoreVector, top_k: int, temperature: float, rng) -> int:
    """Draw one token from the temperature-softmaxed top-k scores."""
    if top_k < 1:
        raise InvalidValueError("top_k must be at least 1")
    if temperature <= 0:
        raise InvalidValueError("temperature must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    finite = np.isfinite(scores) | (scores == -math.inf)
    if not np.all(finite) or not np.any(scores > -math.inf):
        raise DegenerateDistributionError("no finite scores to sample from")
    k = min(top_k, scores.size)
    keep = np.sort(np.argpartition(-scores, k - 1)[:k])
    logits = scores[keep] / temperature
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return int(as_rng(rng).choice(keep, p=probs))


# ---------------------------------------------------------------------------
# Autoregressive generation
# ---------------------------------------------------------------------------

def ar_generate(model: ARModel, condition, cfg: GuidanceConfig, length: int, rng,
                *, mode: str = "cfg", classifier: ClassifierModel | None = None,
                codebooks: cd.RvqCodebooks | None = None,
                class_targets: Mapping[str, int] | None = None) -> np.ndarray:
    """Generate a flattened token sequence one token at a time.

    ``cfg`` mode combines conditional and unconditional model scores;
    ``cg`` mode steers an unconditional model with a classifier that
    scores every candidate token's decoded partial waveform against the
    target classes. CG cost is O(K) model-decode-classify evaluations
    per step, so it suits small vocabularies.
    """
    if mode not in ("cfg", "cg"):
        raise InvalidValueError(f"unknown generation mode {mode!r}")
    if mode == "cg" and (classifier is None or codebooks is None or not class_targets):
        raise ConfigurationError("cg mode needs a classifier, codebooks, and targets")
    gen = as_rng(rng)
    tokens: list[int] = []
    for step in range(length):
        prefix = np.asarray(tokens, dtype=np.int64)
        try:
            if mode == "cfg":
                scores = np.asarray(model(prefix, condition), dtype=np.float64)
                if cfg.cfg_weight != 0.0:
                    scores = cfg_combine(scores, model(prefix, None), cfg.cfg_weight)
            else:
                ar_scores = np.asarray(model(prefix, None), dtype=np.float64)
                terms = _classifier_terms(
                    tokens, ar_scores.size, classifier, codebooks,
                    class_targets, cfg.classifier_weights)
                scores = cg_combine(ar_scores, terms, cfg.lam)
        except (DegenerateDistributionError, InvalidValueError):
            raise
        except Exception as exc:
            raise SamplingError(f"model query failed at step {step}: {exc}") from exc
        tokens.append(topk_sample(scores, cfg.top_k, cfg.temperature, gen))
    return np.asarray(tokens, dtype=np.int64)


def _classifier_terms(tokens, vocab, classifier, codebooks, class_targets, weights):
    per_slot = {slot: np.empty(vocab) for slot in class_targets}
    for v in range(vocab):
        wave = cd.decode_tokens(tokens + [v], codebooks)
        logps = classifier(wave)
        for slot, target_class in class_targets.items():
            per_slot[slot][v] = float(logps[slot][target_class])
    return [(per_slot[slot], weights.get(slot, 1.0)) for slot in class_targets]


# ---------------------------------------------------------------------------
# Masked iterative decoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskSchedule:
    """Cosine unmasking schedule; the masked count strictly decreases to 0."""

    total_steps: int = 20

    def masked_counts(self, num_frames: int) -> list[int]:
        """Target masked-frame count after each step.

        Follows ceil(T * cos(pi/2 * s/S)), lowered where needed so the
        sequence strictly decreases and ends at exactly 0.

        Raises
        ------
        ConfigurationError
            If there are more steps than frames (strict decrease to 0
            would be impossible).
        """
        steps = self.total_steps
        if steps < 1:
            raise ConfigurationError("schedule needs at least one step")
        if steps > num_frames:
            raise ConfigurationError(
                f"{steps} steps cannot strictly unmask {num_frames} frames")
        counts = []
        prev = num_frames
        for s in range(1, steps + 1):
            c = math.ceil(num_frames * math.cos(math.pi / 2.0 * s / steps))
            c = max(0, min(c, prev - 1))
            if s == steps:
                c = 0
            counts.append(c)
            prev = c
        return counts


def maskgit_generate(model: MaskedModel, condition, num_stages: int, num_frames: int,
                     schedule: MaskSchedule = MaskSchedule(), cfg_weight: float = 0.0,
                     temperature: float = 1.0, rng=0) -> cd.Codegram:
    """Iteratively unmask a frame-masked codegram.

    Starts fully masked with frame-level masking (all stages of a frame
    together). Each step samples every masked position, keeps the newly
    sampled frames with the highest confidence (mean post-temperature
    log-probability across stages, ties to the lowest frame index) until
    the schedule's masked count is reached, and re-masks the rest.
    Committed frames are never re-predicted.
    """
    if temperature <= 0:
        raise InvalidValueError("temperature must be positive")
    gen = as_rng(rng)
    counts = schedule.masked_counts(num_frames)
    codes = np.full((num_stages, num_frames), MASK, dtype=np.int64)
    committed = np.zeros(num_frames, dtype=bool)

    for step, target_masked in enumerate(counts):
        masked = np.nonzero(~committed)[0]
        try:
            scores = np.asarray(model(codes, condition), dtype=np.float64)
            if cfg_weight != 0.0:
                scores = (1.0 + cfg_weight) * scores - cfg_weight * np.asarray(
                    model(codes, None), dtype=np.float64)
        except Exception as exc:
            raise SamplingError(f"masked model failed at step {step}: {exc}") from exc
        if scores.shape[:2] != (num_stages, num_frames):
            raise InvalidValueError(
                f"masked model returned shape {scores.shape}, expected "
                f"({num_stages}, {num_frames}, K)")

        logits = scores[:, masked, :] / temperature
        logits -= logits.max(axis=-1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=-1, keepdims=True)
        cdf = np.cumsum(probs, axis=-1)
        draws = gen.random((num_stages, masked.size, 1))
        sampled = (draws < cdf).argmax(axis=-1)
        picked_p = np.take_along_axis(probs, sampled[..., None], axis=-1)[..., 0]
        confidence = np.log(np.maximum(picked_p, 1e-300)).mean(axis=0)

        n_unmask = masked.size - target_masked
        order = np.argsort(-confidence, kind="stable")[:n_unmask]
        chosen = masked[np.sort(order)]
        codes[:, chosen] = sampled[:, np.sort(order)]
        committed[chosen] = True
    return codes


# ---------------------------------------------------------------------------
# Flow sampling
# ---------------------------------------------------------------------------

def euler_sample(model: VelocityModel, x0: np.ndarray, condition, steps: int,
                 cfg_weight: float = 0.0) -> np.ndarray:
    """Integrate a velocity field from t=0 to t=1 with fixed Euler steps.

    x_{i+1} = x_i + v(x_i, t_i, condition) / steps with t_i = i/steps.
    With classifier-free guidance enabled the velocity is
    (1 + w) * v_cond - w * v_uncond.

    Raises
    ------
    DivergenceError
        If a step produces non-finite velocities (message carries the
        step index).
    """
    if steps < 1:
        raise InvalidValueError("steps must be at least 1")
    x = np.array(x0, dtype=np.float64)
    for i in range(steps):
        t = i / steps
        v = np.asarray(model(x, t, condition), dtype=np.float64)
        if cfg_weight != 0.0:
            v = (1.0 + cfg_weight) * v - cfg_weight * np.asarray(
                model(x, t, None), dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite velocity at step {i}")
        x = x + v / steps
    return x


# ---------------------------------------------------------------------------
# Reference models
# ---------------------------------------------------------------------------

class NgramModel:
    """Additive-smoothed n-gram over flattened codes; ignores conditioning."""

    def __init__(self, corpus: Sequence[np.ndarray], order: int, vocab_size: int,
                 alpha: float = 1.0):
        if order < 1:
            raise ConfigurationError("order must be at least 1")
        if not corpus:
            raise ConfigurationError("empty n-gram corpus")
        self.order = order
        self.vocab_size = vocab_size
        self.alpha = alpha
        self._counts: dict[tuple, np.ndarray] = {}
        for seq in corpus:
            seq = np.asarray(seq, dtype=np.int64)
            for i, tok in enumerate(seq):
                for ctx_len in range(min(order - 1, i) + 1):
                    ctx = tuple(seq[i - ctx_len:i])
                    counts = self._counts.setdefault(ctx, np.zeros(vocab_size))
                    counts[tok] += 1.0

    def __call__(self, prefix: np.ndarray, condition=None) -> ScoreVector:
        prefix = np.asarray(prefix, dtype=np.int64)
        ctx_len = min(self.order - 1, prefix.size)
        counts = self._counts.get(tuple(prefix[prefix.size - ctx_len:]),
                                  np.zeros(self.vocab_size))
        smoothed = counts + self.alpha
        return np.log(smoothed / smoothed.sum())


def ngram_model(corpus: Sequence[np.ndarray], order: int, vocab_size: int,
                alpha: float = 1.0) -> NgramModel:
    """Train the desk-scale autoregressive stand-in."""
    return NgramModel(corpus, order, vocab_size, alpha)


class OracleMaskedModel:
    """Always predicts a fixed target codegram with maximal confidence."""

    def __init__(self, target: cd.Codegram, vocab_size: int, gain: float = 1e6):
        self.target = np.asarray(target, dtype=np.int64)
        self.vocab_size = vocab_size
        self.gain = gain

    def __call__(self, codes: np.ndarray, condition=None) -> np.ndarray:
        L, T = self.target.shape
        scores = np.zeros((L, T, self.vocab_size))
        for stage in range(L):
            scores[stage, np.arange(T), self.target[stage]] = self.gain
        return scores


class PullToTargetVelocity:
    """Velocity field whose Euler trajectory ends exactly at the target."""

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, x: np.ndarray, t: float, condition=None) -> np.ndarray:
        return (self.target - x) / (1.0 - t)


class OnsetSrdClassifier:
    """Distance-class log-probabilities from the decoded partial's onset.

    A reference classifier for classifier-guided generation: silence
    yields a flat distribution, otherwise probability mass is peaked at
    the measured distance class.
    """

    def __init__(self, grid, sharpness: float = 2.0):
        self.grid = grid
        self.sharpness = sharpness

    def __call__(self, partial: Waveform) -> dict[str, np.ndarray]:
        n = self.grid.num_classes
        try:
            cls = pm.quantize(estimate_srd(partial), self.grid)
            logp = -self.sharpness * np.abs(np.arange(n) - cls).astype(np.float64)
        except DegenerateSignalError:
            logp = np.zeros(n)
        logp = logp - np.log(np.exp(logp).sum())
        return {"srd_m": logp}
