"""Estimator training and the four task-transfer regimes.

The estimator maps mel grids to 40-d item embeddings under an MSE +
cosine-proximity loss.  Task models reuse its schedule as backbone plus
penultimate layer and add a task head; the regimes differ in where the
backbone weights come from and whether a distillation term pulls the
penultimate activation toward the (frozen) estimator's output:

* base — random init, task loss only;
* fix  — backbone copied from the estimator and frozen, head trained;
* init — backbone copied from the estimator, everything trained;
* kd   — random init, task loss + kd_weight * distillation loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn.adam import AdamConfig, AdamState, adam_step
from .nn.layers import FullyConnected
from .nn.losses import cosine_proximity_loss, mse_loss, softmax_cross_entropy
from .nn.network import NetworkModel, build_network

REGIMES = ("base", "fix", "init", "kd")


@dataclass
class TrainConfig:
    """Estimator training knobs.

    dtype selects the training precision; gradient checks always run the
    library default of 64-bit, 32-bit roughly halves desk-run times.
    """

    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 0.001
    seed: int = 0
    patience: Optional[int] = None
    dtype: str = "float64"


@dataclass
class RegimeConfig:
    regime: str
    kd_weight: float = 1.0
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.001
    seed: int = 0
    patience: Optional[int] = None
    dtype: str = "float64"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.kd_weight < 0:
            raise ValueError("kd_weight must be nonnegative")


@dataclass
class TaskSpec:
    kind: str  # "classification" | "regression"
    n_classes: Optional[int] = None
    target_dim: Optional[int] = None
    metric: str = "accuracy"

    def __post_init__(self):
        if self.kind == "classification":
            if not self.n_classes or self.n_classes < 2:
                raise ValueError("classification needs >= 2 classes")
            if self.metric != "accuracy":
                raise ValueError("classification tasks use the accuracy metric")
        elif self.kind == "regression":
            self.target_dim = self.target_dim or 1
            if self.metric != "r_squared":
                raise ValueError("regression tasks use the r_squared metric")
        else:
            raise ValueError(f"unknown task kind {self.kind!r}")

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.kind == "classification" else self.target_dim


@dataclass
class TaskData:
    """Features plus targets and a disjoint train/val/test index split."""

    features: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        parts = [np.asarray(p, dtype=np.int64) for p in (self.train_idx, self.val_idx, self.test_idx)]
        self.train_idx, self.val_idx, self.test_idx = parts
        combined = np.concatenate(parts)
        if combined.size != np.unique(combined).size:
            raise ValueError("train/val/test index sets overlap")
        if any(p.size == 0 for p in parts):
            raise ValueError("train, val and test splits must all be nonempty")


@dataclass
class ExperimentResult:
    regime: str
    n_channels: int
    seed: int
    fold: int
    metric_name: str
    metric_value: float
    epochs_run: int
    seconds: float = 0.0
    curve: list = field(default_factory=list)


@dataclass
class TaskModel:
    """Estimator-shaped network (penultimate output) plus a task head."""

    network: NetworkModel
    head: FullyConnected

    def predict(self, x, batch_size=64):
        """Head outputs in eval mode, computed in batches."""
        penult = predict_network(self.network, x, batch_size=batch_size)
        return self.head.forward(penult)[0]


def distillation_loss(penultimate, estimated_cf):
    """MSE plus cosine proximity between activation and estimated embedding.

    Returns (value, gradient wrt the penultimate activation); the
    estimated embedding is a constant target, so no gradient reaches the
    estimator.  A perfect match scores 0 + (-1) = -1.
    """
    m_val, m_grad = mse_loss(penultimate, estimated_cf)
    c_val, c_grad = cosine_proximity_loss(penultimate, estimated_cf)
    return m_val + c_val, m_grad + c_grad


def predict_network(model: NetworkModel, x, batch_size=64):
    """Eval-mode forward over batches, no caches kept."""
    outs = []
    for lo in range(0, x.shape[0], batch_size):
        out, _ = model.forward(x[lo : lo + batch_size], train=False, keep_cache=False)
        outs.append(out)
    return np.concatenate(outs, axis=0)


def _epoch_batches(train_idx, batch_size, rng):
    """Shuffled batches; a trailing singleton is merged into its neighbor
    so train-mode batch norm always sees at least two samples."""
    order = rng.permutation(train_idx)
    batches = [order[i : i + batch_size] for i in range(0, order.size, batch_size)]
    if len(batches) > 1 and batches[-1].size == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def train_cf_estimator(
    features,
    targets,
    specs,
    input_shape,
    config: TrainConfig,
    train_idx,
    val_idx,
    on_epoch=None,
):
    """Fit the audio-to-embedding estimator.

    Minimizes mse + cosine proximity on the 40-d output over ``train_idx``
    and returns the parameter snapshot with the lowest validation loss,
    plus an info dict (per-epoch curve, best epoch, epochs run).
    """
    dtype = np.dtype(config.dtype)
    features = np.asarray(features, dtype=dtype)
    targets = np.asarray(targets, dtype=np.float64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("estimator training needs nonempty train and validation splits")
    if np.intersect1d(train_idx, val_idx).size:
        raise ValueError("train and validation splits overlap")
    model = build_network(specs, input_shape, seed=config.seed, dtype=dtype)
    out_dim = model.output_shape[0]
    if targets.ndim != 2 or targets.shape[1] != out_dim:
        raise ValueError(
            f"targets must be (n, {out_dim}) to match the model output, got {targets.shape}"
        )
    if train_idx.size < 2:
        raise ValueError("train split too small for train-mode batch norm")

    rng = np.random.default_rng([config.seed, 1])
    optimizer = AdamState(model.named_params(), AdamConfig(learning_rate=config.learning_rate))

    def combined_loss(idx):
        out = predict_network(model, features[idx])
        return mse_loss(out, targets[idx])[0] + cosine_proximity_loss(out, targets[idx])[0]

    best_val = np.inf
    best_state = model.get_state()
    best_epoch = -1
    curve = []
    epochs_run = 0
    for epoch in range(config.epochs):
        train_losses = []
        for batch in _epoch_batches(train_idx, config.batch_size, rng):
            out, caches = model.forward(features[batch], train=True)
            m_val, m_grad = mse_loss(out, targets[batch])
            c_val, c_grad = cosine_proximity_loss(out, targets[batch])
            _, grads = model.backward(caches, m_grad + c_grad)
            adam_step(optimizer, model.named_params(), model.named_grads(grads))
            train_losses.append(m_val + c_val)
        val_loss = combined_loss(val_idx)
        curve.append(
            {"epoch": epoch, "train_loss": float(np.mean(train_losses)), "val_loss": val_loss}
        )
        epochs_run = epoch + 1
        if val_loss < best_val:
            best_val = val_loss
            best_state = model.get_state()
            best_epoch = epoch
        if on_epoch is not None:
            on_epoch(epoch, model, curve[-1])
        if config.patience is not None and epoch - best_epoch >= config.patience:
            break
    model.set_state(best_state)
    return model, {"curve": curve, "best_epoch": best_epoch, "epochs_run": epochs_run}


def _task_loss(task: TaskSpec, outputs, targets):
    if task.kind == "classification":
        return softmax_cross_entropy(outputs, targets)
    t = targets.reshape(outputs.shape)
    return mse_loss(outputs, t)


def _metric_value(task: TaskSpec, outputs, targets):
    from .evaluation import accuracy, r_squared

    if task.kind == "classification":
        return accuracy(np.argmax(outputs, axis=1), targets)
    return r_squared(outputs[:, 0], np.asarray(targets, dtype=np.float64).reshape(-1))


def _train_head_only(task, data, head, feats, regime):
    """fix regime body: the backbone is frozen, so penultimate features are
    precomputed once and only the head is optimized."""
    rng = np.random.default_rng([regime.seed, 1])
    optimizer = AdamState(head.params, AdamConfig(learning_rate=regime.learning_rate))
    best_val, best_params, best_epoch = np.inf, {k: v.copy() for k, v in head.params.items()}, -1
    curve = []
    epochs_run = 0
    for epoch in range(regime.epochs):
        train_losses = []
        for batch in _epoch_batches(data.train_idx, regime.batch_size, rng):
            out, cache = head.forward(feats[batch])
            loss, dout = _task_loss(task, out, data.targets[batch])
            _, grads = head.backward(dout, cache)
            adam_step(optimizer, head.params, grads)
            train_losses.append(loss)
        val_out = head.forward(feats[data.val_idx])[0]
        val_loss = _task_loss(task, val_out, data.targets[data.val_idx])[0]
        curve.append(
            {
                "epoch": epoch,
                "train_total": float(np.mean(train_losses)),
                "train_task": float(np.mean(train_losses)),
                "train_kd": 0.0,
                "val_task": val_loss,
            }
        )
        epochs_run = epoch + 1
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_params = {k: v.copy() for k, v in head.params.items()}
        if regime.patience is not None and epoch - best_epoch >= regime.patience:
            break
    for k, v in best_params.items():
        head.params[k][...] = v
    return curve, epochs_run


def train_task(
    task: TaskSpec,
    data: TaskData,
    specs,
    input_shape,
    n_channels: int,
    regime: RegimeConfig,
    cf_estimator: Optional[NetworkModel] = None,
    fold: int = 0,
):
    """Train one task model under one regime; returns (TaskModel, result).

    fix, init and kd require a trained estimator whose schedule matches
    the task backbone exactly; base ignores the estimator.  Model
    selection keeps the epoch with the least task-specific validation
    loss (the kd term never enters selection).
    """
    needs_estimator = regime.regime in ("fix", "init", "kd")
    if needs_estimator:
        if cf_estimator is None:
            raise ValueError(f"regime {regime.regime!r} requires a trained estimator")
        if list(cf_estimator.specs) != list(specs) or cf_estimator.input_shape != tuple(input_shape):
            raise ValueError("backbone schedule mismatch between estimator and task model")

    dtype = np.dtype(regime.dtype)
    network = build_network(specs, input_shape, seed=regime.seed, dtype=dtype)
    penult_dim = network.output_shape[0]
    head_rng = np.random.default_rng([regime.seed, 2])
    head = FullyConnected(penult_dim, task.output_dim, head_rng, dtype=dtype)

    if regime.regime in ("fix", "init"):
        network.set_state(cf_estimator.get_state())

    features = np.asarray(data.features, dtype=dtype)

    if regime.regime == "fix":
        feats = predict_network(network, features)
        curve, epochs_run = _train_head_only(task, data, head, feats, regime)
        model = TaskModel(network=network, head=head)
        metric = _metric_value(task, head.forward(feats[data.test_idx])[0], data.targets[data.test_idx])
        result = ExperimentResult(
            regime=regime.regime,
            n_channels=n_channels,
            seed=regime.seed,
            fold=fold,
            metric_name=task.metric,
            metric_value=metric,
            epochs_run=epochs_run,
            curve=curve,
        )
        return model, result

    teacher = None
    if regime.regime == "kd":
        teacher = predict_network(cf_estimator, features)

    rng = np.random.default_rng([regime.seed, 1])
    all_params = {f"net.{k}": v for k, v in network.named_params().items()}
    all_params.update({f"head.{k}": v for k, v in head.params.items()})
    optimizer = AdamState(all_params, AdamConfig(learning_rate=regime.learning_rate))

    def val_task_loss():
        penult = predict_network(network, features[data.val_idx])
        out = head.forward(penult)[0]
        return _task_loss(task, out, data.targets[data.val_idx])[0]

    best_val = np.inf
    best_state = (network.get_state(), {k: v.copy() for k, v in head.params.items()})
    best_epoch = -1
    curve = []
    epochs_run = 0
    for epoch in range(regime.epochs):
        totals, tasks_l, kds = [], [], []
        for batch in _epoch_batches(data.train_idx, regime.batch_size, rng):
            penult, caches = network.forward(features[batch], train=True)
            out, head_cache = head.forward(penult)
            task_val, dout = _task_loss(task, out, data.targets[batch])
            dpenult, head_grads = head.backward(dout, head_cache)
            kd_val = 0.0
            if regime.regime == "kd":
                kd_val, kd_grad = distillation_loss(penult, teacher[batch])
                if regime.kd_weight != 0.0:
                    dpenult = dpenult + regime.kd_weight * kd_grad
            _, net_grads = network.backward(caches, dpenult)
            grads = {f"net.{k}": v for k, v in network.named_grads(net_grads).items()}
            grads.update({f"head.{k}": v for k, v in head_grads.items()})
            adam_step(optimizer, all_params, grads)
            tasks_l.append(task_val)
            kds.append(kd_val)
            totals.append(task_val + regime.kd_weight * kd_val)
        val_loss = val_task_loss()
        curve.append(
            {
                "epoch": epoch,
                "train_total": float(np.mean(totals)),
                "train_task": float(np.mean(tasks_l)),
                "train_kd": float(np.mean(kds)),
                "val_task": val_loss,
            }
        )
        epochs_run = epoch + 1
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_state = (network.get_state(), {k: v.copy() for k, v in head.params.items()})
        if regime.patience is not None and epoch - best_epoch >= regime.patience:
            break

    network.set_state(best_state[0])
    for k, v in best_state[1].items():
        head.params[k][...] = v
    model = TaskModel(network=network, head=head)
    test_out = model.predict(features[data.test_idx])
    metric = _metric_value(task, test_out, data.targets[data.test_idx])
    result = ExperimentResult(
        regime=regime.regime,
        n_channels=n_channels,
        seed=regime.seed,
        fold=fold,
        metric_name=task.metric,
        metric_value=metric,
        epochs_run=epochs_run,
        curve=curve,
    )
    return model, result
