"""Training loop: composite objective, Adam with decoupled weight decay,
validation-MCC early stopping, and ablation runs.

The objective over a batch of days is

    J = mean_t CE(labels_{t+1}, forward(X_t, A_t)) - alpha * sum_l r_l + penalty

where r_l is the layer's neighborhood radius. With the default softmax
parameterization the theta constraint is exact and the penalty term is
identically zero; the squared-penalty mode instead trains raw theta weights
and adds sum_l (sum_k theta_{l,k} - 1)^2.

Per-day gradients are computed on separate tapes and reduced in fixed day
order, which is linear-algebra-identical to differentiating the mean loss on
one tape (a regression test asserts this) and keeps memory flat.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import AlignedHistory, SplitSpec, make_labels, make_window, split_day_indices
from .errors import EvaluationError, ValidationError
from .evaluation import EvalReport, evaluate_days
from .graph import EntropyConfig, build_adjacency
from .model import Model, ModelConfig

log = logging.getLogger(__name__)

ABLATION_MODES = ("no-entropy-graph", "no-diffusion", "coupled")


@dataclass
class TrainConfig:
    alpha: float = 2.9e-3
    lr: float = 2e-4
    weight_decay: float = 1.5e-5
    epochs: int = 1200
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    patience: int = 100
    penalty_mode: str = "softmax-exact"  # or "squared-penalty"
    eval_every: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if self.lr <= 0:
            raise ValidationError("learning rate must be > 0")
        if self.penalty_mode not in ("softmax-exact", "squared-penalty"):
            raise ValidationError(f"unknown penalty_mode {self.penalty_mode!r}")
        if self.epochs < 1 or self.eval_every < 1:
            raise ValidationError("epochs and eval_every must be >= 1")

    @property
    def theta_mode(self) -> str:
        return "softmax" if self.penalty_mode == "softmax-exact" else "raw"


@dataclass
class Day:
    """One training sample: features for day t, graph for day t, labels for t+1."""

    day_index: int
    date: str
    features: np.ndarray
    adjacency: np.ndarray
    labels: np.ndarray


@dataclass
class TrainState:
    epochs_run: int = 0
    best_epoch: int = -1
    best_val_mcc: float = -np.inf
    best_params: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    aborted: bool = False
    test_guard_ok: bool = True


# ---------------------------------------------------------------------------
# day preparation
# ---------------------------------------------------------------------------


def prepare_days(history: AlignedHistory, indices: list[int], tau: int,
                 entropy_cfg: EntropyConfig, edge_features: str = "raw",
                 static_adjacency: np.ndarray | None = None) -> list[Day]:
    """Assemble model inputs per day; adjacency from entropy edges or a file."""
    if edge_features not in ("raw", "normalized"):
        raise ValidationError(f"edge_features must be raw or normalized, got {edge_features!r}")
    days = []
    for t in indices:
        window = make_window(history, t, tau)
        if static_adjacency is not None:
            adj = static_adjacency
        else:
            source = window.raw if edge_features == "raw" else window.features
            adj = build_adjacency(source, entropy_cfg)
        days.append(Day(t, window.date, window.features, adj, make_labels(history, t)))
    return days


def prepare_split(history: AlignedHistory, splits: SplitSpec, name: str, tau: int,
                  entropy_cfg: EntropyConfig, edge_features: str = "raw",
                  static_adjacency: np.ndarray | None = None) -> list[Day]:
    indices = split_day_indices(history, splits, name, tau)
    return prepare_days(history, indices, tau, entropy_cfg, edge_features,
                        static_adjacency)


def _hash_days(days: list[Day]) -> str:
    digest = hashlib.sha256()
    for day in days:
        digest.update(day.date.encode())
        digest.update(day.features.tobytes())
        digest.update(day.adjacency.tobytes())
        digest.update(day.labels.tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def _regularizer(model: Model, cfg: TrainConfig) -> tuple[Tensor | None, float, float]:
    """Tape for -alpha * sum_l r_l + penalty; returns (tensor, radius_sum, penalty)."""
    if model.cfg.frozen_onehop:
        return None, 0.0, 0.0
    radius_sum = model.radius(0)
    for l in range(1, model.cfg.layers):
        radius_sum = ad.add(radius_sum, model.radius(l))
    reg = ad.scale(radius_sum, -cfg.alpha)
    penalty_value = 0.0
    if cfg.penalty_mode == "squared-penalty":
        minus_one = Tensor(np.asarray(-1.0))
        for l in range(model.cfg.layers):
            dev = ad.add(ad.sum_all(model.params[f"layer{l}.theta"]), minus_one)
            sq = ad.mul(dev, dev)
            penalty_value += float(sq.data)
            reg = ad.add(reg, sq)
    return reg, float(radius_sum.data), penalty_value


def batch_gradients(model: Model, days: list[Day], cfg: TrainConfig
                    ) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Gradients of J over ``days`` plus logged loss components.

    One tape per day, reduced in day order; the radius and penalty terms are
    differentiated once on their own tape.
    """
    if not days:
        raise ValidationError("batch_gradients: empty batch")
    grads = {name: np.zeros_like(p.data) for name, p in model.params.items()}
    ce_total = 0.0
    inv_b = 1.0 / len(days)
    for day in days:
        logits = model.forward(day.features, day.adjacency)
        ce = ad.cross_entropy(logits, day.labels)
        ce.backward(seed=inv_b)
        ce_total += float(ce.data)
        for name, p in model.params.items():
            if p.grad is not None:
                grads[name] += p.grad
    reg, radius_sum, penalty = _regularizer(model, cfg)
    if reg is not None:
        # backward() only resets grads inside its own graph, so clear the
        # already-harvested day gradients before differentiating the regularizer
        model.zero_grad()
        reg.backward()
        for name, p in model.params.items():
            if p.grad is not None:
                grads[name] += p.grad
        reg_value = float(reg.data)
    else:
        reg_value = 0.0
    ce_mean = ce_total * inv_b
    components = {
        "ce": ce_mean,
        "radius_sum": radius_sum,
        "penalty": penalty,
        "loss": ce_mean + reg_value,
    }
    return grads, components


def full_objective(model: Model, days: list[Day], cfg: TrainConfig) -> Tensor:
    """J as a single tape scalar (used by gradient checking and tests)."""
    total = None
    for day in days:
        ce = ad.cross_entropy(model.forward(day.features, day.adjacency), day.labels)
        total = ce if total is None else ad.add(total, ce)
    loss = ad.scale(total, 1.0 / len(days))
    reg, _, _ = _regularizer(model, cfg)
    if reg is not None:
        loss = ad.add(loss, reg)
    return loss


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Bias-corrected adaptive moments with decoupled weight decay."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.params.items()}


def restore(model: Model, snapshot: dict[str, np.ndarray]) -> None:
    for name, p in model.params.items():
        p.data = snapshot[name].copy()


def train(model: Model, train_days: list[Day], val_days: list[Day], cfg: TrainConfig,
          test_days: list[Day] | None = None) -> TrainState:
    """Optimize the model; returns the state with the best-MCC snapshot.

    The test partition, when given, is hashed before the first step and
    re-checked afterwards so that no optimizer code path can quietly touch it.
    """
    state = TrainState()
    test_hash = _hash_days(test_days) if test_days else None
    log.info("training: %d parameters, %d train days, %d val days",
             model.param_count(), len(train_days), len(val_days))
    optimizer = Adam(model.params, cfg.lr, cfg.weight_decay)
    batches = _make_batches(train_days, cfg.batch_size)
    since_best = 0
    state.best_params = _snapshot(model)

    for epoch in range(cfg.epochs):
        components = None
        for batch in batches:
            try:
                grads, components = batch_gradients(model, batch, cfg)
            except EvaluationError as exc:
                log.error("%s at epoch %d; aborting with last-good snapshot", exc, epoch)
                state.aborted = True
                restore(model, state.best_params)
                state.epochs_run = epoch
                return state
            if not np.isfinite(components["loss"]):
                log.error("non-finite loss at epoch %d; aborting with last-good snapshot",
                          epoch)
                state.aborted = True
                restore(model, state.best_params)
                state.epochs_run = epoch
                return state
            optimizer.step(grads)
        state.epochs_run = epoch + 1

        row = {"epoch": epoch, "train_ce": components["ce"],
               "radius_sum": components["radius_sum"],
               "penalty": components["penalty"], "loss": components["loss"],
               "val_acc": np.nan, "val_mcc": np.nan, "val_f1": np.nan}
        if val_days and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            report = evaluate_days(model, val_days, "validation")
            row.update(val_acc=report.acc, val_mcc=report.mcc, val_f1=report.f1)
            if report.mcc > state.best_val_mcc:
                state.best_val_mcc = report.mcc
                state.best_epoch = epoch
                state.best_params = _snapshot(model)
                since_best = 0
            else:
                since_best += cfg.eval_every
            if since_best > cfg.patience:
                state.history.append(row)
                log.info("early stop at epoch %d (best val MCC %.4f at epoch %d)",
                         epoch, state.best_val_mcc, state.best_epoch)
                break
        state.history.append(row)

    if not val_days:
        state.best_params = _snapshot(model)
        state.best_epoch = state.epochs_run - 1
    restore(model, state.best_params)
    if test_hash is not None:
        state.test_guard_ok = _hash_days(test_days) == test_hash
        if not state.test_guard_ok:
            raise EvaluationError("test partition changed during training")
    return state


def _make_batches(days: list[Day], batch_size: int) -> list[list[Day]]:
    if batch_size <= 0 or batch_size >= len(days):
        return [days]
    return [days[i:i + batch_size] for i in range(0, len(days), batch_size)]


def history_csv(state: TrainState) -> str:
    """Metrics history as CSV text (epoch and loss components per row)."""
    lines = ["epoch,train_ce,radius_sum,penalty,loss,val_acc,val_mcc,val_f1"]
    for row in state.history:
        lines.append(",".join([
            str(row["epoch"]),
            repr(row["train_ce"]), repr(row["radius_sum"]), repr(row["penalty"]),
            repr(row["loss"]),
            repr(row["val_acc"]), repr(row["val_mcc"]), repr(row["val_f1"]),
        ]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------


def ablation_model_config(base: ModelConfig, mode: str) -> ModelConfig:
    """Model configuration for one ablation mode (graph source handled upstream)."""
    if mode not in ABLATION_MODES:
        raise ValidationError(f"unknown ablation mode {mode!r}; choose from {ABLATION_MODES}")
    out = copy.deepcopy(base)
    if mode == "no-diffusion":
        out.frozen_onehop = True
    elif mode == "coupled":
        out.coupled = True
    return out


def run_ablation(history: AlignedHistory, splits: SplitSpec, tau: int,
                 entropy_cfg: EntropyConfig, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, mode: str, edge_features: str = "raw",
                 static_adjacency: np.ndarray | None = None) -> tuple[EvalReport, TrainState]:
    """Train one ablated variant and report test metrics."""
    if mode == "no-entropy-graph" and static_adjacency is None:
        raise ValidationError("no-entropy-graph ablation requires a static adjacency file")
    static = static_adjacency if mode == "no-entropy-graph" else None
    cfg = ablation_model_config(model_cfg, mode)
    cfg.theta_mode = train_cfg.theta_mode
    kwargs = dict(tau=tau, entropy_cfg=entropy_cfg, edge_features=edge_features,
                  static_adjacency=static)
    train_days = prepare_split(history, splits, "train", **kwargs)
    val_days = prepare_split(history, splits, "validation", **kwargs)
    test_days = prepare_split(history, splits, "test", **kwargs)
    model = Model(history.n_nodes, train_days[0].features.shape[1], cfg,
                  seed=train_cfg.seed)
    state = train(model, train_days, val_days, train_cfg, test_days=test_days)
    report = evaluate_days(model, test_days, "test")
    return report, state
