"""DP-SGD canary training and Monte-Carlo posterior estimation.

Trains a T-position, D-symbol table of independent softmax rows on a single
secret sequence (the canary) with noisy clipped gradient descent, across many
independently seeded models.  The probability each trained model assigns to
the canary, averaged over models in log-space, estimates the posterior p1
that a sampling adversary reconstructs the secret; comparing log(p1/p0)
against the accountant-derived leakage bound makes the guarantee empirical.

All per-model randomness flows from counter-based streams derived from
(master seed, model index), so training is reproducible bit-for-bit for any
thread count, and the vectorized multi-model path matches the sequential
single-model path exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .accountant import compose, sgm_rdp_curve
from .bounds import min_leakage

DEFAULT_SIGMA_GRID = (0.5, 1.0, 2.0, 2.875, 4.0, 10.0)
DEFAULT_CALIBRATION_SWEEP = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32)
CALIBRATION_SIGMA = 2.875
CALIBRATION_TARGET_MEAN = -22.5

_MODEL_BATCH = 2500
_STEP_CHUNK = 50
_BOOTSTRAP_STREAM = 2**62
_N_BOOTSTRAP = 200


@dataclass(frozen=True)
class Canary:
    """The secret sequence: T digits from an alphabet of size D."""

    digits: tuple[int, ...]
    alphabet: int
    replication: int = 1

    def __post_init__(self) -> None:
        if len(self.digits) < 1:
            raise ValueError("canary must have at least one position")
        if self.alphabet < 2:
            raise ValueError(f"alphabet size must be >= 2, got {self.alphabet}")
        if any(not 0 <= d < self.alphabet for d in self.digits):
            raise ValueError("canary digits must lie in [0, alphabet)")
        if self.replication < 1:
            raise ValueError(f"replication must be >= 1, got {self.replication}")

    @property
    def length(self) -> int:
        return len(self.digits)

    @property
    def log_p0(self) -> float:
        """Log prior of guessing the canary blind: log of alphabet^-T."""
        return -self.length * math.log(self.alphabet)

    @classmethod
    def default(cls, length: int = 10, alphabet: int = 10, replication: int = 1) -> "Canary":
        """A fixed canonical canary; training statistics are invariant to the
        actual digits, so any fixed choice is representative."""
        return cls(
            digits=tuple(i % alphabet for i in range(length)),
            alphabet=alphabet,
            replication=replication,
        )


@dataclass(frozen=True)
class TrainConfig:
    """One DP-SGD run: noise multiplier, clip, learning rate, steps, rate q."""

    sigma: float
    clip: float = 1.0
    lr: float | None = None
    steps: int = 1000
    q: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ValueError(f"noise multiplier must be >= 0, got {self.sigma}")
        if self.clip <= 0.0:
            raise ValueError(f"clipping norm must be > 0, got {self.clip}")
        if self.sigma > 0.0 and math.isinf(self.clip):
            raise ValueError("noise scales with the clipping norm; clip must be finite when sigma > 0")
        if self.lr is not None and self.lr <= 0.0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.lr is None and self.sigma == 0.0:
            raise ValueError("learning rate rule 0.5/sigma is undefined at sigma=0; set lr explicitly")
        if self.steps < 1:
            raise ValueError(f"step count must be >= 1, got {self.steps}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"sampling rate q must be in (0, 1], got {self.q}")

    @property
    def resolved_lr(self) -> float:
        """The configured learning rate, defaulting to 0.5/sigma."""
        return self.lr if self.lr is not None else 0.5 / self.sigma


@dataclass(frozen=True)
class McEstimate:
    """Monte-Carlo posterior estimate over independently trained models."""

    n_models: int
    log_p1: float
    per_model_mean: float
    per_model_std: float
    leakage_nats: float
    log_p0: float
    se_log_p1: float


def _ordered_sum(x: np.ndarray) -> np.ndarray:
    """Left-to-right sum over the last axis.

    numpy's `.sum()` picks its reduction order from the array shape (a whole
    array collapses through a pairwise path, a batched axis reduction does
    not), so the same row of values can round differently depending on how
    many rows sit beside it.  Training must be bit-identical between the
    single-model and batched paths, so every reduction they share goes
    through this fixed-order sum instead.
    """
    total = x[..., 0]
    for t in range(1, x.shape[-1]):
        total = total + x[..., t]
    return total


def softmax_log_probs(theta: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of a (..., T, D) table."""
    m = theta.max(axis=-1, keepdims=True)
    shifted = theta - m
    return shifted - np.log(_ordered_sum(np.exp(shifted)))[..., None]


def canary_log_prob(theta: np.ndarray, canary: Canary) -> float | np.ndarray:
    """log f(c): the log-probability the table assigns to the canary.

    Accepts a single (T, D) table or a stacked (N, T, D) batch.
    """
    log_u = softmax_log_probs(theta)
    positions = np.arange(canary.length)
    picked = log_u[..., positions, list(canary.digits)]
    total = _ordered_sum(picked)
    return float(total) if total.ndim == 0 else total


def loss(theta: np.ndarray, canary: Canary) -> float:
    """Summed negative log-likelihood of the canary under the table."""
    return -float(canary_log_prob(theta, canary))


def grad(theta: np.ndarray, canary: Canary) -> np.ndarray:
    """Analytic gradient of the loss: softmax probabilities minus one-hot."""
    u = np.exp(softmax_log_probs(theta))
    g = u.copy()
    g[np.arange(canary.length), list(canary.digits)] -= 1.0
    return g


def clip_gradient(g: np.ndarray, clip: float) -> np.ndarray:
    """Scale g to Frobenius norm at most clip, preserving direction."""
    if clip <= 0.0:
        raise ValueError(f"clipping norm must be > 0, got {clip}")
    if math.isinf(clip):
        return g
    norm = float(np.sqrt(_ordered_sum(_ordered_sum(g * g))))
    return g / max(1.0, norm / clip)


def model_rng(master_seed: int, model_index: int) -> np.random.Generator:
    """The counter-based random stream for one model."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((master_seed, model_index)))
    )


def _nominal_batch(q: float, replication: int) -> int:
    return max(1, round(q * replication))


def dp_sgd_step(
    theta: np.ndarray, canary: Canary, config: TrainConfig, rng: np.random.Generator
) -> np.ndarray:
    """One noisy clipped gradient step on the canary batch.

    With q = 1 every canary copy is in the batch and L = replication; with
    q < 1 each copy enters by an independent Bernoulli(q) draw and L is the
    realized count.  A zero-inclusion step applies noise alone, scaled by the
    nominal batch size max(1, round(q * replication)).  The update is
    theta - lr * (sum of clipped copy gradients + N(0, (sigma clip)^2)) / L.
    """
    if config.q < 1.0:
        included = int(np.count_nonzero(rng.random(canary.replication) < config.q))
    else:
        included = canary.replication
    batch = included if included > 0 else _nominal_batch(config.q, canary.replication)

    if included > 0:
        g = clip_gradient(grad(theta, canary), config.clip) * float(included)
    else:
        g = np.zeros_like(theta)
    if config.sigma > 0.0:
        g = g + config.sigma * config.clip * rng.standard_normal(theta.shape)
    return theta - config.resolved_lr * (g / float(batch))


def train_model(canary: Canary, config: TrainConfig, model_index: int = 0) -> np.ndarray:
    """Train one model from a zero-initialized table; the sequential reference."""
    theta = np.zeros((canary.length, canary.alphabet))
    rng = model_rng(config.seed, model_index)
    for _ in range(config.steps):
        theta = dp_sgd_step(theta, canary, config, rng)
    return theta


def _train_batch_q1(
    canary: Canary,
    config: TrainConfig,
    model_indices: np.ndarray,
    checkpoints: list[int],
) -> np.ndarray:
    """Vectorized q = 1 training of a batch of models.

    Returns an (n_models, n_checkpoints) array of canary log-probabilities.
    Noise is pre-drawn per model in step chunks from the same per-model
    streams as the sequential path, so results are bit-identical to it.
    """
    n = len(model_indices)
    t_len, d = canary.length, canary.alphabet
    theta = np.zeros((n, t_len, d))
    onehot = np.zeros((t_len, d))
    onehot[np.arange(t_len), list(canary.digits)] = 1.0
    gens = [model_rng(config.seed, int(i)) for i in model_indices]
    lr = config.resolved_lr
    finite_clip = not math.isinf(config.clip)
    repl = float(canary.replication)

    out = np.empty((n, len(checkpoints)))
    checkpoint_at = {step: j for j, step in enumerate(checkpoints)}
    if 0 in checkpoint_at:
        out[:, checkpoint_at[0]] = canary_log_prob(theta, canary)

    # Every arithmetic step below repeats dp_sgd_step's operations elementwise
    # (same expressions, same reduction layout), so each model's trajectory is
    # bit-identical to the sequential path.
    step = 0
    while step < config.steps:
        chunk = min(_STEP_CHUNK, config.steps - step)
        if config.sigma > 0.0:
            noise = np.stack([g.standard_normal((chunk, t_len, d)) for g in gens])
        for k in range(chunk):
            g = np.exp(softmax_log_probs(theta)) - onehot
            if finite_clip:
                norms = np.sqrt(_ordered_sum(_ordered_sum(g * g)))
                g = g / np.maximum(1.0, norms / config.clip)[:, None, None]
            g = g * repl
            if config.sigma > 0.0:
                g = g + config.sigma * config.clip * noise[:, k]
            theta = theta - lr * (g / repl)
            step += 1
            if step in checkpoint_at:
                out[:, checkpoint_at[step]] = canary_log_prob(theta, canary)
    return out


def _train_batch_general(
    canary: Canary,
    config: TrainConfig,
    model_indices: np.ndarray,
    checkpoints: list[int],
) -> np.ndarray:
    """Sequential per-model training for q < 1 (Bernoulli batch inclusion)."""
    out = np.empty((len(model_indices), len(checkpoints)))
    checkpoint_at = {step: j for j, step in enumerate(checkpoints)}
    for row, i in enumerate(model_indices):
        theta = np.zeros((canary.length, canary.alphabet))
        rng = model_rng(config.seed, int(i))
        if 0 in checkpoint_at:
            out[row, checkpoint_at[0]] = canary_log_prob(theta, canary)
        for step in range(1, config.steps + 1):
            theta = dp_sgd_step(theta, canary, config, rng)
            if step in checkpoint_at:
                out[row, checkpoint_at[step]] = canary_log_prob(theta, canary)
    return out


def train_models_log_probs(
    canary: Canary,
    config: TrainConfig,
    n_models: int,
    checkpoints: list[int] | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Canary log-probabilities across n_models independently seeded models.

    Returns an (n_models, len(checkpoints)) array; checkpoints defaults to
    [config.steps].  Checkpoint step 0 is the untrained table.  Results do
    not depend on the thread count.
    """
    if n_models < 1:
        raise ValueError(f"need at least one model, got {n_models}")
    checkpoints = sorted(checkpoints) if checkpoints is not None else [config.steps]
    if any(c < 0 or c > config.steps for c in checkpoints):
        raise ValueError("checkpoints must lie in [0, steps]")
    if len(set(checkpoints)) != len(checkpoints):
        raise ValueError("checkpoints must be unique")

    train = _train_batch_q1 if config.q == 1.0 else _train_batch_general
    batches = [
        np.arange(start, min(start + _MODEL_BATCH, n_models))
        for start in range(0, n_models, _MODEL_BATCH)
    ]
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: train(canary, config, b, checkpoints), batches))
    else:
        parts = [train(canary, config, b, checkpoints) for b in batches]
    return np.concatenate(parts, axis=0)


def estimate_from_log_probs(
    log_f: np.ndarray, log_p0: float, bootstrap_seed: int = 0
) -> McEstimate:
    """Aggregate per-model canary log-probabilities into a posterior estimate.

    log p1 is the log-mean-exp across models; its standard error comes from a
    seeded bootstrap over models, so the estimate is fully deterministic.
    """
    log_f = np.asarray(log_f, dtype=float)
    if log_f.ndim != 1 or log_f.size == 0:
        raise ValueError("expected a non-empty 1-D array of per-model log-probabilities")
    n = log_f.size
    log_p1 = float(logsumexp(log_f) - math.log(n))
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence((bootstrap_seed, _BOOTSTRAP_STREAM)))
    )
    if n > 1:
        idx = rng.integers(0, n, size=(_N_BOOTSTRAP, n))
        resampled = logsumexp(log_f[idx], axis=1) - math.log(n)
        se = float(resampled.std())
    else:
        se = math.inf
    return McEstimate(
        n_models=n,
        log_p1=log_p1,
        per_model_mean=float(log_f.mean()),
        per_model_std=float(log_f.std()),
        leakage_nats=log_p1 - log_p0,
        log_p0=log_p0,
        se_log_p1=se,
    )


def mc_estimate(
    canary: Canary, config: TrainConfig, n_models: int, threads: int = 1
) -> McEstimate:
    """Train n_models models and estimate the canary's posterior probability."""
    log_f = train_models_log_probs(canary, config, n_models, threads=threads)[:, 0]
    return estimate_from_log_probs(log_f, canary.log_p0, bootstrap_seed=config.seed)


@dataclass(frozen=True)
class LeakageRow:
    """One sigma's empirical-vs-bound comparison."""

    sigma: float
    steps: int
    log_p1: float
    per_model_mean: float
    per_model_std: float
    leakage_nats: float
    bound_nats: float
    se_log_p1: float


def leakage_experiment(
    sigma_grid: tuple[float, ...],
    canary: Canary,
    config: TrainConfig,
    n_models: int,
    orders: np.ndarray | None = None,
    threads: int = 1,
) -> list[LeakageRow]:
    """Empirical leakage against the theoretical bound across noise levels.

    For each sigma, trains n_models fresh models (same master seed, so the
    underlying standard normals pair across sigmas), estimates log p1, and
    computes the minimized leakage bound from the accountant curve composed
    over the configured steps.  sigma = 0 yields an infinite bound.
    """
    rows = []
    for sigma in sigma_grid:
        cfg = replace(config, sigma=sigma)
        est = mc_estimate(canary, cfg, n_models, threads=threads)
        if sigma == 0.0:
            bound = math.inf
        else:
            curve = compose(sgm_rdp_curve(cfg.q, sigma, orders), cfg.steps)
            bound = min_leakage(curve, canary.log_p0).L_nats
        rows.append(
            LeakageRow(
                sigma=sigma,
                steps=cfg.steps,
                log_p1=est.log_p1,
                per_model_mean=est.per_model_mean,
                per_model_std=est.per_model_std,
                leakage_nats=est.leakage_nats,
                bound_nats=bound,
                se_log_p1=est.se_log_p1,
            )
        )
    return rows


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of the step-count sweep matching a target per-model mean."""

    recommended_steps: int
    target_mean: float
    rows: list[tuple[int, float, float]]  # (steps, per_model_mean, per_model_std)


def calibrate_steps(
    canary: Canary,
    config: TrainConfig,
    sweep: tuple[int, ...] = DEFAULT_CALIBRATION_SWEEP,
    n_models: int = 2000,
    target_mean: float = CALIBRATION_TARGET_MEAN,
    threads: int = 1,
) -> CalibrationResult:
    """Sweep step counts and pick the one whose per-model mean log-probability
    is closest to the target.

    All candidates are measured in a single training run with shared
    per-model noise (checkpoints of the same trajectory), so the sweep is
    paired.  Ties break to the smaller step count.
    """
    if not sweep:
        raise ValueError("calibration sweep must contain at least one step count")
    if any(s < 1 for s in sweep):
        raise ValueError("swept step counts must be >= 1")
    candidates = sorted(set(sweep))
    cfg = replace(config, steps=max(candidates))
    log_f = train_models_log_probs(canary, cfg, n_models, checkpoints=candidates, threads=threads)
    rows = [
        (step, float(log_f[:, j].mean()), float(log_f[:, j].std()))
        for j, step in enumerate(candidates)
    ]
    best = min(rows, key=lambda r: (abs(r[1] - target_mean), r[0]))
    return CalibrationResult(recommended_steps=best[0], target_mean=target_mean, rows=rows)
