"""Cross-entropy training with minibatch SGD and a delayed momentum schedule."""

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from hdnn.data import Prng, derive_seed, minibatches
from hdnn.linalg import ShapeError, as_matrix
from hdnn.model import backward_network, forward_network, init_params

log = logging.getLogger(__name__)

LR_HALVING = ("off", "halve-when-valid-ce-worsens")
LOG_HEADER = "epoch,train_ce,valid_ce,valid_fer,seconds"

# sub-stream tags for derive_seed
SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum_after_first_epoch: float = 0.9
    batch_size: int = 128
    num_epochs: int = 20
    seed: int = 0
    lr_halving: str = "off"
    dropout_rate: float = None

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum_after_first_epoch < 1.0:
            raise ValueError("momentum_after_first_epoch must lie in [0, 1)")
        if self.batch_size < 1 or self.num_epochs < 1:
            raise ValueError("batch_size and num_epochs must be positive")
        if self.lr_halving not in LR_HALVING:
            raise ValueError(f"lr_halving must be one of {LR_HALVING}, got {self.lr_halving!r}")


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    train_ce: float
    valid_ce: float
    valid_fer: float
    seconds: float

    def csv_row(self):
        return (
            f"{self.epoch},{self.train_ce:.6f},{self.valid_ce:.6f},"
            f"{self.valid_fer:.6f},{self.seconds:.3f}"
        )


def cross_entropy(probs, targets):
    """Mean of ``-ln p[row, target]``; probabilities are clamped at 1e-300."""
    return float(np.mean(_row_losses(probs, targets)))


def _row_losses(probs, targets):
    probs = as_matrix(probs)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (probs.shape[0],):
        raise ShapeError(f"{targets.size} targets for {probs.shape[0]} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= probs.shape[1]):
        raise ValueError(f"labels must lie in [0, {probs.shape[1]})")
    picked = probs[np.arange(probs.shape[0]), targets]
    return -np.log(np.maximum(picked, 1e-300))


def momentum_for_epoch(epoch, momentum_after_first_epoch=0.9):
    if epoch < 1:
        raise ValueError(f"epochs are numbered from 1, got {epoch}")
    return 0.0 if epoch == 1 else momentum_after_first_epoch


def init_velocity(params):
    return params.zeros_like()


def sgd_step(params, grads, velocity, lr, mu):
    """Classical momentum, in place: ``v = mu*v - lr*g; theta = theta + v``.

    Fields are updated in ``ModelParams.named_arrays()`` order.
    """
    triples = zip(params.named_arrays(), grads.named_arrays(), velocity.named_arrays())
    for (name, theta), (gname, g), (_, v) in triples:
        if name != gname or theta.shape != g.shape or theta.shape != v.shape:
            raise ShapeError(f"sgd_step: {name} {theta.shape} vs {gname} {g.shape} / {v.shape}")
        v *= mu
        v -= lr * g
        theta += v
    return params, velocity


def evaluate(params, arch, features, labels, chunk=4096):
    """``(mean CE, FER)`` with dropout off; ties in argmax go to the lowest index."""
    features = as_matrix(features)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if labels.shape != (features.shape[0],):
        raise ShapeError(f"{labels.size} labels for {features.shape[0]} frames")
    losses, errors = [], 0
    for i in range(0, features.shape[0], chunk):
        probs, _ = forward_network(params, arch, features[i : i + chunk])
        y = labels[i : i + chunk]
        losses.append(_row_losses(probs, y))
        errors += int(np.count_nonzero(np.argmax(probs, axis=1) != y))
    return float(np.mean(np.concatenate(losses))), errors / features.shape[0]


def check_dims(arch, features, labels, what):
    features = as_matrix(features)
    if features.shape[1] != arch.input_dim:
        raise ShapeError(f"{what}: feature dim {features.shape[1]} != input_dim {arch.input_dim}")
    labels = np.asarray(labels)
    if labels.size and labels.max() >= arch.output_dim:
        raise ShapeError(f"{what}: label {int(labels.max())} >= output_dim {arch.output_dim}")
    if features.shape[0] == 0:
        raise ShapeError(f"{what}: empty dataset")


def run_training(arch, train, valid, config, params=None, on_epoch=None):
    """Train and evaluate once per epoch.

    ``train`` and ``valid`` are ``(features, labels)`` pairs of spliced
    frames. Returns ``(reports, params)``. Fresh parameters come from
    ``init_params(arch, config.seed)`` unless ``params`` is given.
    """
    if config.dropout_rate is not None:
        arch = dataclasses.replace(arch, dropout_rate=config.dropout_rate)
    train_x, train_y = as_matrix(train[0]), np.asarray(train[1], dtype=np.int64)
    valid_x, valid_y = as_matrix(valid[0]), np.asarray(valid[1], dtype=np.int64)
    check_dims(arch, train_x, train_y, "train")
    check_dims(arch, valid_x, valid_y, "valid")

    params = init_params(arch, config.seed) if params is None else params.copy()
    velocity = init_velocity(params)
    lr = config.learning_rate
    reports = []
    prev_valid_ce = None
    for epoch in range(1, config.num_epochs + 1):
        start = time.perf_counter()
        mu = momentum_for_epoch(epoch, config.momentum_after_first_epoch)
        drop_rng = Prng(derive_seed(config.seed, DROPOUT_STREAM, epoch))
        batches = minibatches(
            train_x, train_y, config.batch_size, derive_seed(config.seed, SHUFFLE_STREAM, epoch)
        )
        for xb, yb in batches:
            _, trace = forward_network(params, arch, xb, training=True, rng=drop_rng)
            grads = backward_network(params, arch, trace, yb)
            sgd_step(params, grads, velocity, lr, mu)
        train_ce, _ = evaluate(params, arch, train_x, train_y)
        valid_ce, valid_fer = evaluate(params, arch, valid_x, valid_y)
        report = EpochReport(epoch, train_ce, valid_ce, valid_fer, time.perf_counter() - start)
        reports.append(report)
        log.info("epoch %d lr %g: %s", epoch, lr, report.csv_row())
        if on_epoch is not None:
            on_epoch(report)
        lr = next_learning_rate(lr, prev_valid_ce, valid_ce, config.lr_halving)
        prev_valid_ce = valid_ce
    return reports, params


def next_learning_rate(lr, prev_valid_ce, valid_ce, rule):
    """Halve the rate after an epoch whose validation CE got worse."""
    if rule == "off" or prev_valid_ce is None or valid_ce <= prev_valid_ce:
        return lr
    return 0.5 * lr


def write_log(path, reports):
    with open(path, "w", newline="\n") as fh:
        fh.write(LOG_HEADER + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")
