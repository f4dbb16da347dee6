"""Mini-batch SGD with momentum over Siamese pair batches.

The loop is deliberately plain: sample a pair batch, take the combined
loss gradient, apply one momentum step per weighted layer. Everything
downstream of (initial model, dataset, config.seed) is bit-reproducible,
which the tests and the training log format both rely on.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, DivergenceError, DomainError
from .features import CUBE_SHAPE
from .losses import Hyperparams, total_loss
from .metrics import evaluate
from .prune import _check_mask, sparsity_stats


@dataclass
class PairDataset:
    """Utterance ids grouped by speaker plus their feature cubes."""
    by_speaker: dict
    cubes: dict

    def __post_init__(self):
        if not self.by_speaker:
            raise ConfigError("dataset has no speakers")
        seen = set()
        for spk, utts in self.by_speaker.items():
            if not utts:
                raise ConfigError(f"speaker {spk} has no utterances")
            for u in utts:
                if u in seen:
                    raise ConfigError(f"duplicate utterance id {u}")
                seen.add(u)
                cube = self.cubes.get(u)
                if cube is None:
                    raise ConfigError(f"no feature cube for utterance {u}")
                if cube.shape != CUBE_SHAPE:
                    raise ConfigError(
                        f"cube for {u} has shape {cube.shape}, want {CUBE_SHAPE}")

    @property
    def n_utterances(self):
        return sum(len(u) for u in self.by_speaker.values())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    genuine_ratio: float = 0.5
    seed: int = 0
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    prune_tau: float = 1e-3
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1: {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1: {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1): {self.momentum}")
        if not 0.0 < self.genuine_ratio < 1.0:
            raise ConfigError(
                f"genuine_ratio must be in (0, 1): {self.genuine_ratio}")
        if self.learning_rate < 0:
            raise ConfigError(
                f"learning_rate must be >= 0: {self.learning_rate}")
        if self.prune_tau < 0:
            raise ConfigError(f"prune_tau must be >= 0: {self.prune_tau}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1: {self.eval_every}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    total_loss: float
    data_loss: float
    group_lasso: float
    sparsity_fraction: float
    dev_eer: float = None


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)


def sample_pair_batch(dataset, batch_size, genuine_ratio, rng):
    """Draw round(genuine_ratio*batch_size) genuine pairs, rest impostor.

    Genuine: uniform speaker among those with >= 2 utterances, then two
    distinct utterances. Impostor: two distinct uniform speakers, one
    utterance each. Advances rng deterministically.
    """
    n_genuine = int(genuine_ratio * batch_size + 0.5)
    n_impostor = batch_size - n_genuine
    speakers = sorted(dataset.by_speaker)
    multi = [s for s in speakers if len(dataset.by_speaker[s]) >= 2]
    if n_genuine > 0 and not multi:
        raise CapacityError("no speaker has two utterances")
    if n_impostor > 0 and len(speakers) < 2:
        raise CapacityError("impostor pairs need at least two speakers")
    batch = []
    for _ in range(n_genuine):
        spk = multi[rng.integers(len(multi))]
        utts = dataset.by_speaker[spk]
        i, j = rng.choice(len(utts), size=2, replace=False)
        batch.append((dataset.cubes[utts[i]], dataset.cubes[utts[j]], 1))
    for _ in range(n_impostor):
        a, b = rng.choice(len(speakers), size=2, replace=False)
        ua = dataset.by_speaker[speakers[a]]
        ub = dataset.by_speaker[speakers[b]]
        batch.append((dataset.cubes[ua[rng.integers(len(ua))]],
                      dataset.cubes[ub[rng.integers(len(ub))]], 0))
    return batch


def sgd_momentum_step(w, grad, velocity, lr, mu):
    """v' = mu*v - lr*grad; w' = w + v'."""
    v = mu * velocity - lr * grad
    return w + v, v


def _zero_velocities(model):
    return [(np.zeros_like(layer.weights), np.zeros_like(layer.bias))
            for _, layer in model.weighted_layers()]


def _run_steps(model, dataset, config, mask=None, dev_trials=None,
               dev_cubes=None):
    """Shared train/fine_tune loop. mask, when given, pins dropped
    groups' weights, biases and velocities to zero after every step."""
    model = model.clone()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    velocities = _zero_velocities(model)
    steps_per_epoch = max(1, dataset.n_utterances // config.batch_size)
    log = TrainLog()
    if mask is not None:
        _check_mask(model, mask)
        _apply_mask_inplace(model, velocities, mask)
    for epoch in range(1, config.epochs + 1):
        tot_sum = data_sum = gs_sum = 0.0
        for step in range(1, steps_per_epoch + 1):
            batch = sample_pair_batch(
                dataset, config.batch_size, config.genuine_ratio, rng)
            try:
                loss, grads, parts = total_loss(
                    model, batch, config.hyperparams, return_parts=True)
            except DomainError as e:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}, step {step}: {e}"
                ) from e
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {step}")
            for slot, (idx, layer) in enumerate(model.weighted_layers()):
                gw, gb = grads[slot]
                vw, vb = velocities[slot]
                layer.weights, vw = sgd_momentum_step(
                    layer.weights, gw, vw, config.learning_rate,
                    config.momentum)
                layer.bias, vb = sgd_momentum_step(
                    layer.bias, gb, vb, config.learning_rate, config.momentum)
                velocities[slot] = (vw, vb)
            if mask is not None:
                _apply_mask_inplace(model, velocities, mask)
            tot_sum += loss
            data_sum += parts["data"]
            gs_sum += parts["group_lasso"]
        stats = sparsity_stats(model, config.prune_tau)
        dev_eer = None
        if dev_trials is not None and epoch % config.eval_every == 0:
            cubes = dev_cubes if dev_cubes is not None else dataset.cubes
            report, _ = evaluate(model, dev_trials, cubes)
            dev_eer = report.eer
        log.epochs.append(EpochStats(
            epoch=epoch,
            total_loss=tot_sum / steps_per_epoch,
            data_loss=data_sum / steps_per_epoch,
            group_lasso=gs_sum / steps_per_epoch,
            sparsity_fraction=stats.total,
            dev_eer=dev_eer))
    return model, log


def _apply_mask_inplace(model, velocities, mask):
    for slot, (idx, layer) in enumerate(model.weighted_layers()):
        dropped = ~mask.keep[slot]
        layer.weights[dropped] = 0.0
        layer.bias[dropped] = 0.0
        vw, vb = velocities[slot]
        vw[dropped] = 0.0
        vb[dropped] = 0.0


def train(model, dataset, config, dev_trials=None, dev_cubes=None):
    """Full training run. Returns (trained model, TrainLog)."""
    return _run_steps(model, dataset, config, mask=None,
                      dev_trials=dev_trials, dev_cubes=dev_cubes)


def fine_tune(model, mask, dataset, config, dev_trials=None, dev_cubes=None):
    """Mask-respecting training: dropped groups stay exactly zero."""
    tuned, _ = _run_steps(model, dataset, config, mask=mask,
                          dev_trials=dev_trials, dev_cubes=dev_cubes)
    return tuned


def trainlog_csv(log):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "total_loss", "data_loss", "group_lasso",
                "sparsity_fraction", "dev_eer"])
    for e in log.epochs:
        w.writerow([e.epoch,
                    f"{e.total_loss:.17g}",
                    f"{e.data_loss:.17g}",
                    f"{e.group_lasso:.17g}",
                    f"{e.sparsity_fraction:.17g}",
                    "" if e.dev_eer is None else f"{e.dev_eer:.17g}"])
    return buf.getvalue()
