"""Fitting the evidential network: Adam loop, normalization, checkpoints.

Targets are min-max normalized to [-1, 1] over the *training* split only
(the tanh head lives there); calibration and test members always reuse
the training transform. Everything downstream of a checkpoint reports in
original units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import network as net_mod
from .container import (
    ContainerCorruptError,
    ContainerVersionError,
    read_container,
    write_container,
)
from .evidential import (
    EvidentialField,
    LossWeights,
    RawInterval,
    UncertaintySummary,
    aleatoric,
    epistemic,
    loss_gradients,
    loss_terms,
    raw_interval,
)
from .network import EvidentialNet, NetConfig

__all__ = [
    "TrainConfig",
    "NormalizationTransform",
    "AdamState",
    "Checkpoint",
    "TrainingDivergedError",
    "adam_step",
    "fit",
    "save_checkpoint",
    "load_checkpoint",
    "ContainerCorruptError",
    "ContainerVersionError",
]

_SHUFFLE_STREAM = 0x5158


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; the message names the offending batch."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 16
    learning_rate: float = 1e-3
    weights: LossWeights = dc_field(default_factory=LossWeights)
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when set")


@dataclass(frozen=True)
class NormalizationTransform:
    """Affine map between original units and the [-1, 1] training range."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise ValueError("require y_max > y_min")

    @property
    def half_range(self):
        return 0.5 * (self.y_max - self.y_min)

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_min) / self.half_range - 1.0

    def denormalize(self, y):
        return (np.asarray(y, dtype=np.float64) + 1.0) * self.half_range + self.y_min

    @classmethod
    def from_targets(cls, targets):
        return cls(y_min=float(np.min(targets)), y_max=float(np.max(targets)))


@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params):
        return cls(
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; params are updated in place."""
    t = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    lr, eps = config.learning_rate, config.adam_eps
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, AdamState(step=t, m=state.m, v=state.v)


@dataclass
class Checkpoint:
    """Trained net plus everything needed to use it in original units."""

    net: EvidentialNet
    transform: NormalizationTransform
    train_config: TrainConfig
    loss_history: list

    def predict_field(self, x) -> EvidentialField:
        """Evidential field in normalized target units."""
        return net_mod.forward(self.net, x)

    def predict(self, x) -> UncertaintySummary:
        """Point prediction and uncertainties, denormalized."""
        f = self.predict_field(x)
        s2 = self.transform.half_range**2
        return UncertaintySummary(
            prediction=self.transform.denormalize(f.gamma),
            aleatoric=aleatoric(f) * s2,
            epistemic=epistemic(f) * s2,
        )

    def raw_intervals(self, x, delta) -> RawInterval:
        """Uncalibrated predictive interval in original units."""
        iv = raw_interval(self.predict_field(x), delta)
        return RawInterval(
            lo=self.transform.denormalize(iv.lo),
            hi=self.transform.denormalize(iv.hi),
            confidence=iv.confidence,
        )


def _stack_split(dataset, split):
    members = dataset.split(split)
    if not members:
        return members, np.empty((0, 0)), np.empty((0,))
    x = np.stack([m.params for m in members]).astype(np.float64)
    y = np.stack([m.field for m in members]).astype(np.float64)
    return members, x, y


def fit(
    dataset,
    net_config: NetConfig,
    train_config: TrainConfig,
    log_path=None,
    initial: Checkpoint | None = None,
) -> Checkpoint:
    """Train on the dataset's train split; deterministic for fixed seeds.

    With ``initial`` given, training resumes from that checkpoint's
    weights and transform (fresh optimizer state) and extends its loss
    history.
    """
    members, x_all, y_all = _stack_split(dataset, "train")
    if not members:
        raise ValueError("training split is empty")
    if not np.all(np.isfinite(y_all)):
        raise ValueError("training targets must be finite")

    if initial is not None:
        net = EvidentialNet(
            config=initial.net.config,
            weights=[w.copy() for w in initial.net.weights],
            biases=[b.copy() for b in initial.net.biases],
        )
        transform = initial.transform
        history = list(initial.loss_history)
    else:
        net = net_mod.init(net_config)
        transform = NormalizationTransform.from_targets(y_all)
        history = []

    y_norm = transform.normalize(y_all)
    n_members = x_all.shape[0]
    n_elements = net.config.n_elements
    w = train_config.weights

    params = net.weights + net.biases
    state = AdamState.zeros_like(params)
    shuffle_rng = np.random.default_rng([train_config.seed, _SHUFFLE_STREAM])

    records = []
    start_epoch = len(history)
    best = np.inf
    stale = 0
    for epoch in range(start_epoch, start_epoch + train_config.epochs):
        order = shuffle_rng.permutation(n_members)
        sums = np.zeros(4)  # nll, reg, u, total accumulated per member
        for lo in range(0, n_members, train_config.batch_size):
            idx = order[lo : lo + train_config.batch_size]
            xb, yb = x_all[idx], y_norm[idx]
            # A diverging run overflows here; the finiteness check below
            # is the error path, so silence the intermediate warnings.
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                f = net_mod.forward(net, xb)
                nll, reg, u = loss_terms(f, yb)
                total = nll + w.lambda_reg * reg + w.xi_reg * u
            batch_mean = float(np.mean(total))
            if not np.isfinite(batch_mean):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting at "
                    f"position {lo} (member ids {[members[i].member_id for i in idx]})"
                )
            def member_sum(arr):
                return float(np.sum(np.mean(arr.reshape(len(idx), -1), axis=1)))

            sums += np.array(
                [member_sum(nll), member_sum(reg), member_sum(u), member_sum(total)]
            )

            upstream = loss_gradients(f, yb, w) / (len(idx) * n_elements)
            wg, bg = net_mod.backward(net, xb, upstream)
            params, state = adam_step(params, wg + bg, state, train_config)

        means = sums / n_members
        history.append(float(means[3]))
        records.append(
            {
                "epoch": epoch,
                "nll": means[0],
                "reg": means[1],
                "u": means[2],
                "total": means[3],
            }
        )
        if train_config.patience is not None:
            if means[3] < best - 1e-12:
                best = means[3]
                stale = 0
            else:
                stale += 1
                if stale >= train_config.patience:
                    break

    if log_path is not None:
        Path(log_path).write_text(
            "".join(json.dumps(r) + "\n" for r in records)
        )
    return Checkpoint(
        net=net, transform=transform, train_config=train_config, loss_history=history
    )


def save_checkpoint(ckpt: Checkpoint, path):
    """Serialize to the binary container; round-trips byte-identically."""
    cfg = ckpt.net.config
    tc = ckpt.train_config
    sections = {
        "net/input_dim": np.array(cfg.input_dim, dtype=np.int64),
        "net/hidden_sizes": np.array(cfg.hidden_sizes, dtype=np.int64),
        "net/grid_shape": np.array(cfg.grid_shape, dtype=np.int64),
        "net/seed": np.array(cfg.seed, dtype=np.int64),
    }
    for k, w in enumerate(ckpt.net.weights):
        sections[f"net/w{k}"] = w
    for k, b in enumerate(ckpt.net.biases):
        sections[f"net/b{k}"] = b
    sections["transform/y_min"] = np.array(ckpt.transform.y_min)
    sections["transform/y_max"] = np.array(ckpt.transform.y_max)
    sections["train/epochs"] = np.array(tc.epochs, dtype=np.int64)
    sections["train/batch_size"] = np.array(tc.batch_size, dtype=np.int64)
    sections["train/seed"] = np.array(tc.seed, dtype=np.int64)
    sections["train/patience"] = np.array(
        -1 if tc.patience is None else tc.patience, dtype=np.int64
    )
    sections["train/learning_rate"] = np.array(tc.learning_rate)
    sections["train/adam_beta1"] = np.array(tc.adam_beta1)
    sections["train/adam_beta2"] = np.array(tc.adam_beta2)
    sections["train/adam_eps"] = np.array(tc.adam_eps)
    sections["train/lambda_reg"] = np.array(tc.weights.lambda_reg)
    sections["train/xi_reg"] = np.array(tc.weights.xi_reg)
    sections["loss_history"] = np.array(ckpt.loss_history, dtype=np.float64)
    write_container(path, sections)


def load_checkpoint(path) -> Checkpoint:
    s = read_container(path)
    cfg = NetConfig(
        input_dim=int(s["net/input_dim"]),
        hidden_sizes=tuple(int(h) for h in s["net/hidden_sizes"]),
        grid_shape=tuple(int(g) for g in s["net/grid_shape"]),
        seed=int(s["net/seed"]),
    )
    n_layers = len(cfg.hidden_sizes) + 1
    try:
        weights = [s[f"net/w{k}"] for k in range(n_layers)]
        biases = [s[f"net/b{k}"] for k in range(n_layers)]
    except KeyError as err:
        raise ContainerCorruptError(f"{path}: missing section {err}") from None
    net = EvidentialNet(config=cfg, weights=weights, biases=biases)
    patience = int(s["train/patience"])
    tc = TrainConfig(
        epochs=int(s["train/epochs"]),
        batch_size=int(s["train/batch_size"]),
        learning_rate=float(s["train/learning_rate"]),
        weights=LossWeights(
            lambda_reg=float(s["train/lambda_reg"]),
            xi_reg=float(s["train/xi_reg"]),
        ),
        seed=int(s["train/seed"]),
        adam_beta1=float(s["train/adam_beta1"]),
        adam_beta2=float(s["train/adam_beta2"]),
        adam_eps=float(s["train/adam_eps"]),
        patience=None if patience < 0 else patience,
    )
    transform = NormalizationTransform(
        y_min=float(s["transform/y_min"]), y_max=float(s["transform/y_max"])
    )
    return Checkpoint(
        net=net,
        transform=transform,
        train_config=tc,
        loss_history=[float(v) for v in s["loss_history"]],
    )
