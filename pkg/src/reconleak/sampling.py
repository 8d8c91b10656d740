"""Sequence densities and extraction-risk ranking under decoding policies.

A decoding policy (top-k truncation plus a temperature schedule) turns a
conditional language model into a sampler whose per-sequence probability is
tractable: renormalize the kept next-token probabilities at each position and
chain the products.  That density says how many samples an attacker needs
before a given sequence surfaces (log2 of the reciprocal), and combined with
a calibrated loss (target-model NLL minus a calibration-model NLL) it ranks
which corpus sequences are memorized AND likely to be emitted.

Models are either in-process tables or precomputed per-position score files;
probabilities are natural-log throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from .ngram import softmax_log_probs

_LN2 = math.log(2.0)
_DIST_TOL = 1e-9


class ConditionalModel(Protocol):
    """Read-only access to full next-token log-distributions."""

    @property
    def vocab_size(self) -> int: ...

    def log_next(self, context: tuple[int, ...]) -> np.ndarray: ...


class NgramTableModel:
    """Position-indexed conditional model backed by a (T, D) logit table."""

    def __init__(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 2:
            raise ValueError("expected a (positions, vocab) logit table")
        self._log_probs = softmax_log_probs(theta)

    @property
    def vocab_size(self) -> int:
        return self._log_probs.shape[1]

    @property
    def length(self) -> int:
        return self._log_probs.shape[0]

    def log_next(self, context: tuple[int, ...]) -> np.ndarray:
        position = len(context)
        if position >= self.length:
            raise ValueError(f"context length {position} exceeds table length {self.length}")
        return self._log_probs[position]


@dataclass(frozen=True)
class TemperatureSchedule:
    """Per-position temperature beta: constant, linear decay, or explicit.

    Linear decay follows beta(i) = max(beta_end, beta_start - i * slope) with
    0-based position i.
    """

    kind: str = "constant"
    value: float = 1.0
    beta_start: float = 1.0
    beta_end: float = 1.0
    slope: float = 0.0
    values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "linear", "explicit"):
            raise ValueError(f"unknown temperature schedule kind: {self.kind!r}")
        if self.kind == "constant" and self.value <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.value}")
        if self.kind == "linear" and (self.beta_start <= 0.0 or self.beta_end <= 0.0):
            raise ValueError("linear decay temperatures must stay > 0")
        if self.kind == "explicit" and (not self.values or any(b <= 0.0 for b in self.values)):
            raise ValueError("explicit schedule needs a non-empty list of positive temperatures")

    def beta(self, position: int) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "linear":
            return max(self.beta_end, self.beta_start - position * self.slope)
        if position >= len(self.values):
            raise ValueError(
                f"explicit temperature schedule covers {len(self.values)} positions, "
                f"position {position} requested"
            )
        return self.values[position]


@dataclass(frozen=True)
class SamplingPolicy:
    """Top-k truncation (None keeps the whole vocabulary) plus temperatures.

    Tokens tying the k-th largest probability are all kept.
    """

    k: int | None = None
    temperatures: TemperatureSchedule = field(default_factory=TemperatureSchedule)

    def __post_init__(self) -> None:
        if self.k is not None and self.k < 1:
            raise ValueError(f"top-k cutoff must be >= 1, got {self.k}")

    @classmethod
    def constant(cls, k: int | None = None, beta: float = 1.0) -> "SamplingPolicy":
        return cls(k=k, temperatures=TemperatureSchedule(kind="constant", value=beta))

    @classmethod
    def linear_decay(
        cls, k: int | None, beta_start: float, slope: float, beta_end: float
    ) -> "SamplingPolicy":
        return cls(
            k=k,
            temperatures=TemperatureSchedule(
                kind="linear", beta_start=beta_start, slope=slope, beta_end=beta_end
            ),
        )

    @classmethod
    def explicit(cls, k: int | None, betas: tuple[float, ...]) -> "SamplingPolicy":
        return cls(k=k, temperatures=TemperatureSchedule(kind="explicit", values=tuple(betas)))


def _checked_log_next(model: ConditionalModel, context: tuple[int, ...]) -> np.ndarray:
    log_p = np.asarray(model.log_next(context), dtype=float)
    if log_p.ndim != 1 or log_p.size == 0:
        raise ValueError("model returned an empty next-token distribution")
    total = float(logsumexp(log_p))
    if abs(total) > _DIST_TOL:
        raise ValueError(f"next-token distribution sums to exp({total}), not 1")
    return log_p


def _kept_mask(log_p: np.ndarray, k: int | None) -> np.ndarray:
    if k is None or k >= log_p.size:
        return np.ones_like(log_p, dtype=bool)
    order = np.argsort(-log_p, kind="stable")
    threshold = log_p[order[k - 1]]
    return log_p >= threshold


def _policy_log_probs(
    model: ConditionalModel, policy: SamplingPolicy, context: tuple[int, ...]
) -> np.ndarray:
    """Full-vocabulary log-density row under the policy; excluded tokens -inf."""
    log_p = _checked_log_next(model, context)
    beta = policy.temperatures.beta(len(context))
    kept = _kept_mask(log_p, policy.k)
    out = np.full(log_p.shape, -math.inf)
    scaled = log_p[kept] / beta
    out[kept] = scaled - logsumexp(scaled)
    return out


def conditional_log_density(
    model: ConditionalModel, policy: SamplingPolicy, context: tuple[int, ...], token: int
) -> float:
    """log probability the policy emits `token` after `context`.

    Tokens outside the top-k set have density -inf (the policy can never
    produce them).
    """
    if not 0 <= token < model.vocab_size:
        raise ValueError(f"token {token} outside vocabulary of size {model.vocab_size}")
    return float(_policy_log_probs(model, policy, context)[token])


def sequence_log_density(
    model: ConditionalModel, policy: SamplingPolicy, sequence: tuple[int, ...]
) -> float:
    """log probability the policy emits the whole sequence (chain rule).

    The empty sequence has density 0; any excluded position makes it -inf.
    """
    total = 0.0
    for i, token in enumerate(sequence):
        step = conditional_log_density(model, policy, tuple(sequence[:i]), token)
        if step == -math.inf:
            return -math.inf
        total += step
    return total


def sample_sequence(
    model: ConditionalModel, policy: SamplingPolicy, length: int, rng: np.random.Generator
) -> tuple[int, ...]:
    """Draw one sequence from the policy by per-position inverse-CDF sampling.

    The CDF runs in token-index order, so the draw is deterministic for a
    fixed generator state; zero-density tokens are never emitted.
    """
    out: list[int] = []
    for _ in range(length):
        log_row = _policy_log_probs(model, policy, tuple(out))
        probs = np.exp(log_row)
        cdf = np.cumsum(probs)
        cdf /= cdf[-1]
        token = int(np.searchsorted(cdf, rng.random(), side="right"))
        out.append(token)
    return tuple(out)


def sample_sequences(
    model: ConditionalModel,
    policy: SamplingPolicy,
    length: int,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw n sequences at once; returns an (n, length) integer array.

    Consumes the generator's uniform stream in the same order as n calls to
    sample_sequence, and applies the same per-context CDF arithmetic, so the
    output is bit-identical to the sequential path -- this is just the
    Monte-Carlo-friendly form.
    """
    if n < 0:
        raise ValueError(f"sample count must be >= 0, got {n}")
    u = rng.random((n, length))
    out = np.zeros((n, length), dtype=int)
    vocab = model.vocab_size
    codes = np.zeros(n, dtype=int)
    prefix_of: dict[int, tuple[int, ...]] = {0: ()}
    cdfs: dict[tuple[int, ...], np.ndarray] = {}
    for i in range(length):
        next_prefix_of: dict[int, tuple[int, ...]] = {}
        for code in np.unique(codes):
            context = prefix_of[int(code)]
            cdf = cdfs.get(context)
            if cdf is None:
                probs = np.exp(_policy_log_probs(model, policy, context))
                cdf = np.cumsum(probs)
                cdf /= cdf[-1]
                cdfs[context] = cdf
            mask = codes == code
            tokens = np.searchsorted(cdf, u[mask, i], side="right")
            out[mask, i] = tokens
            for token in np.unique(tokens):
                next_prefix_of[int(code) * vocab + int(token)] = context + (int(token),)
        codes = codes * vocab + out[:, i]
        prefix_of = next_prefix_of
    return out


def trials_log2(log_lambda: float) -> float:
    """Expected sample count before the sequence surfaces, as log2 (bits).

    A density of -inf means the policy can never produce the sequence; the
    result is +inf.
    """
    if log_lambda > 0.0:
        raise ValueError(f"log density must be <= 0, got {log_lambda}")
    return -log_lambda / _LN2


def sequence_nll(model: ConditionalModel, sequence: tuple[int, ...]) -> float:
    """Total negative log-likelihood of the sequence under the raw model."""
    total = 0.0
    for i, token in enumerate(sequence):
        if not 0 <= token < model.vocab_size:
            raise ValueError(f"token {token} outside vocabulary of size {model.vocab_size}")
        total -= float(_checked_log_next(model, tuple(sequence[:i]))[token])
    return total


def calibrated_loss(
    model: ConditionalModel, calib_model: ConditionalModel, sequence: tuple[int, ...]
) -> float:
    """Target-model NLL minus calibration-model NLL on the same sequence.

    Strongly negative values mean the target assigns the sequence far more
    probability than a model that never saw it -- memorization.
    """
    return sequence_nll(model, sequence) - sequence_nll(calib_model, sequence)


class ScoreSet:
    """Precomputed next-token log-distributions for known sequences.

    One record per (sequence id, position), JSON-lines:
    {"id": ..., "position": ..., "log_probs": [...]}.  Used in place of an
    in-process model when scanning corpora scored by an external model.
    """

    def __init__(self, vocab_size: int, records: dict[str, dict[int, np.ndarray]]):
        self.vocab_size = vocab_size
        self._records = records

    @classmethod
    def from_jsonl(cls, path: str) -> "ScoreSet":
        records: dict[str, dict[int, np.ndarray]] = {}
        vocab_size: int | None = None
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    seq_id = str(obj["id"])
                    position = int(obj["position"])
                    log_probs = np.asarray(obj["log_probs"], dtype=float)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{line_no}: malformed score record: {exc}") from exc
                if vocab_size is None:
                    vocab_size = log_probs.size
                elif log_probs.size != vocab_size:
                    raise ValueError(
                        f"{path}:{line_no}: vocabulary size {log_probs.size} != {vocab_size}"
                    )
                records.setdefault(seq_id, {})[position] = log_probs
        if vocab_size is None:
            raise ValueError(f"{path}: no score records found")
        return cls(vocab_size=vocab_size, records=records)

    def model_for(self, seq_id: str) -> "_ScoredSequenceModel":
        return _ScoredSequenceModel(self, seq_id)

    def lookup(self, seq_id: str, position: int) -> np.ndarray:
        by_position = self._records.get(seq_id)
        if by_position is None or position not in by_position:
            raise KeyError(f"no scores for sequence {seq_id!r} position {position}")
        return by_position[position]


class _ScoredSequenceModel:
    """Adapter presenting one scored sequence as a conditional model."""

    def __init__(self, scores: ScoreSet, seq_id: str):
        self._scores = scores
        self._seq_id = seq_id

    @property
    def vocab_size(self) -> int:
        return self._scores.vocab_size

    def log_next(self, context: tuple[int, ...]) -> np.ndarray:
        return self._scores.lookup(self._seq_id, len(context))


@dataclass(frozen=True)
class RiskRecord:
    """Both risk axes for one corpus sequence, plus anomaly flags."""

    sequence_id: str
    log_lambda: float
    trials_log2: float
    calibrated_loss: float
    flags: tuple[str, ...]


def _resolve(source, seq_id: str) -> ConditionalModel:
    if isinstance(source, ScoreSet):
        return source.model_for(seq_id)
    return source


def risk_scan(
    model,
    calib_model,
    policy: SamplingPolicy,
    corpus: list[tuple[str, tuple[int, ...]]],
    at_risk_threshold: float = 0.0,
) -> list[RiskRecord]:
    """Score every corpus sequence on both risk axes and rank.

    `model` and `calib_model` are conditional models or ScoreSets.  Ordering:
    sequences the policy can never emit (density -inf) last; before them,
    at-risk records (calibrated loss below the threshold) by descending
    density, then the rest by descending density; ties break by id.  Records
    with out-of-vocabulary tokens or missing scores are flagged and kept.
    """
    records = []
    for seq_id, tokens in corpus:
        tokens = tuple(int(t) for t in tokens)
        flags: list[str] = []
        target = _resolve(model, seq_id)
        calib = _resolve(calib_model, seq_id)
        if any(not 0 <= t < target.vocab_size for t in tokens):
            flags.append("oov")
            log_lambda, calibrated = -math.inf, math.nan
        else:
            try:
                log_lambda = sequence_log_density(target, policy, tokens)
                calibrated = calibrated_loss(target, calib, tokens)
            except KeyError:
                flags.append("missing_scores")
                log_lambda, calibrated = -math.inf, math.nan
        if log_lambda == -math.inf:
            flags.append("unreachable")
        if calibrated < at_risk_threshold:  # NaN compares False
            flags.append("at_risk")
        records.append(
            RiskRecord(
                sequence_id=seq_id,
                log_lambda=log_lambda,
                trials_log2=trials_log2(log_lambda),
                calibrated_loss=calibrated,
                flags=tuple(flags),
            )
        )

    def order_key(r: RiskRecord):
        unreachable = r.log_lambda == -math.inf
        return (unreachable, "at_risk" not in r.flags, -r.log_lambda, r.sequence_id)

    return sorted(records, key=order_key)
