"""Hybrid CNN-LSTM fatigue classifier and the band-power linear SVM baseline."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import EPOCH_SAMPLES, N_EEG, EpochSet, FatigueClass
from .nn import LayerSpec, Network, TrainConfig, make_optimizer, softmax, softmax_xent

log = logging.getLogger(__name__)

N_CLASSES = len(FatigueClass)


class SingleClassError(ValueError):
    """Training data holds fewer than two classes."""


class DegenerateFeaturesError(ValueError):
    pass


# --------------------------------------------------------------------------- hybrid net

@dataclass
class FatigueNetConfig:
    feature_maps: tuple = (32, 64, 128, 128, 256)
    kernels: tuple = ((1, 5), (1, 5), (1, 5), (5, 1), (3, 1))
    convs_per_block: tuple = (2, 2, 2, 3, 3)
    pooling: tuple = ("max", "max", "avg", None, None)
    pool_size: tuple = (1, 2)
    lstm_units: tuple = (256, 128)
    fc_units: tuple = (128, 64, 3)
    input_shape: tuple = (1, N_EEG, EPOCH_SAMPLES)

    def __post_init__(self):
        n = len(self.feature_maps)
        if not n == len(self.kernels) == len(self.convs_per_block) == len(self.pooling):
            raise ValueError("per-block settings must have equal lengths")
        if n != 5 or len(self.lstm_units) != 2 or len(self.fc_units) != 3:
            raise ValueError("architecture needs 5 conv blocks, 2 LSTM layers and 3 FC layers")
        if self.fc_units[-1] != N_CLASSES:
            raise ValueError(f"last FC layer must have {N_CLASSES} units")
        for p in self.pooling:
            if p not in ("max", "avg", None):
                raise ValueError(f"unknown pooling {p!r}")

    def layer_specs(self) -> list[LayerSpec]:
        """Conv blocks are ``(conv -> ELU) * (n-1) -> conv -> BN -> ELU [-> pool]``."""
        specs = []
        for maps, kern, n_conv, pool in zip(self.feature_maps, self.kernels,
                                            self.convs_per_block, self.pooling):
            for i in range(n_conv):
                specs.append(LayerSpec("conv2d", {"filters": maps, "kernel": tuple(kern)}))
                if i < n_conv - 1:
                    specs.append(LayerSpec("elu"))
            specs += [LayerSpec("batchnorm"), LayerSpec("elu")]
            if pool:
                specs.append(LayerSpec(f"{pool}pool", {"size": tuple(self.pool_size)}))
        specs.append(LayerSpec("sequence"))
        specs += [LayerSpec("lstm", {"units": u}) for u in self.lstm_units]
        specs.append(LayerSpec("last_step"))
        for i, u in enumerate(self.fc_units):
            specs.append(LayerSpec("linear", {"units": u}))
            if i < len(self.fc_units) - 1:
                specs.append(LayerSpec("elu"))
        specs.append(LayerSpec("softmax"))
        return specs

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "FatigueNetConfig":
        def tup(v):
            return tuple(tup(x) for x in v) if isinstance(v, list) else v
        return cls(**{k: tup(v) for k, v in d.items()})

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def build_fatigue_net(cfg: FatigueNetConfig | None = None, seed: int = 0,
                      dtype=np.float32) -> Network:
    cfg = cfg or FatigueNetConfig()
    net = Network(cfg.layer_specs(), cfg.input_shape, seed=seed, dtype=dtype)
    log.debug("fatigue net trace:\n%s", net.format_trace())
    return net


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)      # running, batch-norm in training mode
    fit_acc: list = field(default_factory=list)        # inference mode, only with target_train_acc
    val_acc: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class FatigueModel:
    """Network plus the per-channel input standardization learned on training data."""

    net: Network
    channel_mean: np.ndarray      # [30]
    channel_std: np.ndarray       # [30]

    def prepare(self, data) -> np.ndarray:
        x = (np.asarray(data, dtype=np.float64) - self.channel_mean[:, None]) / self.channel_std[:, None]
        return x[:, None].astype(self.net.dtype)

    def predict_proba(self, data, batch_size: int = 128) -> np.ndarray:
        x = self.prepare(data)
        out = [softmax(self.net.logits(x[i:i + batch_size], train=False))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))

    def predict(self, data, batch_size: int = 128) -> np.ndarray:
        return np.argmax(self.predict_proba(data, batch_size), axis=1)


def channel_stats(data) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(data, dtype=np.float64)
    mean = d.mean(axis=(0, 2))
    std = d.std(axis=(0, 2))
    return mean, np.where(std > 0, std, 1.0)


def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    # equal-ish splits so no batch ends up with a single sample (batch norm needs two)
    perm = rng.permutation(n)
    return np.array_split(perm, max(1, math.ceil(n / batch_size)))


def train_fatigue_net(net: Network, train: EpochSet, cfg: TrainConfig = TrainConfig(),
                      val: EpochSet | None = None, early_stopping: bool = True,
                      target_train_acc: float | None = None) -> tuple[FatigueModel, History]:
    """Mini-batch training with softmax cross-entropy.

    Parameters
    ----------
    net : Network
        Freshly built network; its parameters are updated in place.
    train : EpochSet
        Training epochs, at least two classes.
    cfg : TrainConfig
    val : EpochSet, optional
        Validation epochs.  Accuracy on them is recorded every epoch.
    early_stopping : bool
        Stop once validation accuracy has not improved for ``cfg.patience``
        epochs and restore the best weights.  Without ``val`` it has no effect.
    target_train_acc : float, optional
        Stop as soon as inference-mode accuracy on the training epochs
        reaches this value (checked after every epoch, logged in
        ``History.fit_acc``).

    Returns
    -------
    model : FatigueModel
    history : History
    """
    if len(np.unique(train.labels)) < 2:
        raise SingleClassError("training data needs at least two classes")
    if len(train) < 2:
        raise ValueError("need at least two training epochs")
    mean, std = channel_stats(train.data)
    model = FatigueModel(net, mean, std)
    x = model.prepare(train.data)
    y = train.labels
    x_val = model.prepare(val.data) if val is not None else None
    rng = np.random.default_rng(cfg.seed)
    params = [p for _, p in net.parameters()]
    opt = make_optimizer(params, cfg)
    hist = History()
    best_acc, best_state, stale = -1.0, None, 0

    def predict(xs):
        return np.concatenate([net.logits(xs[i:i + 128], train=False).argmax(axis=1)
                               for i in range(0, len(xs), 128)])

    for epoch in range(cfg.epochs):
        losses, correct = [], 0
        for idx in _batches(len(x), cfg.batch_size, rng):
            logits = net.logits(x[idx], train=True)
            loss, probs, dlogits = softmax_xent(logits, y[idx])
            net.backward(dlogits.astype(net.dtype, copy=False))
            opt.step(net.gradients())
            losses.append(loss * len(idx))
            correct += int((probs.argmax(axis=1) == y[idx]).sum())
        hist.train_loss.append(float(sum(losses) / len(x)))
        hist.train_acc.append(correct / len(x))
        if val is not None:
            acc = float((predict(x_val) == val.labels).mean())
            hist.val_acc.append(acc)
            if acc > best_acc:
                best_acc, stale, hist.best_epoch = acc, 0, epoch
                if early_stopping:
                    best_state = [a.copy() for _, a in net.state_arrays()]
            else:
                stale += 1
            if early_stopping and stale >= cfg.patience:
                hist.stopped_early = True
                break
        log.debug("epoch %d loss %.4f acc %.3f", epoch, hist.train_loss[-1], hist.train_acc[-1])
        if target_train_acc is not None:
            hist.fit_acc.append(float((predict(x) == y).mean()))
            if hist.fit_acc[-1] >= target_train_acc:
                break
    if early_stopping and best_state is not None:
        for (_, a), saved in zip(net.state_arrays(), best_state):
            a[...] = saved
    return model, hist


# --------------------------------------------------------------------------- PSD-SVM

@dataclass(eq=False)
class SvmModel:
    """Three one-vs-rest linear SVMs on standardized band-power features."""

    weights: np.ndarray          # [3, n_features]
    bias: np.ndarray             # [3]
    lam: float
    feature_mean: np.ndarray
    feature_std: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("SVM weights must be finite")

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_std

    def decision_function(self, X) -> np.ndarray:
        return self.standardize(np.atleast_2d(X)) @ self.weights.T + self.bias

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum, so ties go to the lowest class index
        return np.argmax(self.decision_function(X), axis=1)

    def to_dict(self) -> dict:
        return {"lam": self.lam, "weights": self.weights.tolist(), "bias": self.bias.tolist(),
                "feature_mean": self.feature_mean.tolist(),
                "feature_std": self.feature_std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "SvmModel":
        return cls(np.array(d["weights"]), np.array(d["bias"]), d["lam"],
                   np.array(d["feature_mean"]), np.array(d["feature_std"]))


def train_psd_svm(X, labels, lam: float = 3e-2, epochs: int = 20, seed: int = 0) -> SvmModel:
    """Pegasos stochastic sub-gradient training of one-vs-rest hinge-loss SVMs.

    The bias is learned as the weight of a constant feature.  Each class
    uses the same sample order, so the three problems are solved in lockstep.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be [n, n_features] with one label per row")
    if lam <= 0:
        raise ValueError("lam must be positive")
    if len(X) == 0 or np.all(np.ptp(X, axis=0) == 0):
        raise DegenerateFeaturesError("all feature vectors are identical")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Xa = np.hstack([(X - mean) / std, np.ones((len(X), 1))])
    Y = np.where(y[:, None] == np.arange(N_CLASSES)[None, :], 1.0, -1.0)   # [n, 3]
    W = np.zeros((N_CLASSES, Xa.shape[1]))
    radius = 1.0 / math.sqrt(lam)
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(Xa)):
            t += 1
            eta = 1.0 / (lam * t)
            xi, yi = Xa[i], Y[i]
            active = yi * (W @ xi) < 1.0
            W *= 1.0 - eta * lam
            W[active] += eta * yi[active, None] * xi
            norms = np.linalg.norm(W, axis=1, keepdims=True)
            W *= np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return SvmModel(W[:, :-1].copy(), W[:, -1].copy(), lam, mean, std)


def predict_svm(model: SvmModel, x) -> FatigueClass | np.ndarray:
    """Class of one feature vector, or an array of classes for a matrix."""
    x = np.asarray(x)
    pred = model.predict(x)
    return FatigueClass(int(pred[0])) if x.ndim == 1 else pred
