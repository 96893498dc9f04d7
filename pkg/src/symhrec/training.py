"""Optimization loop: Adam with decoupled weight decay, step-decay learning
rate schedule, per-sample gradient accumulation, per-epoch validation with
best-checkpoint tracking.  Fully deterministic given the config seed."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import PreparedSample, normalize_tree
from .errors import NumericError, SymhrecError
from .graphs import build_graph, make_batch
from .metrics import sms as sms_metric
from .metrics import voxel_iou
from .keypoints import frame_of, perturb_record
from .model import (
    ModelParams,
    batch_loss,
    commit_bn_updates,
    decode_free,
    decode_teacher_forced,
    decode_teacher_forced_batch,
    encode,
    encode_batch,
    loss_from_outputs,
)
from .seeding import derive_seed
from .tree import validate_tree

CHECKPOINT_VERSION = 1


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    lr_step: int = 50
    lr_decay: float = 0.8
    epochs: int = 200
    batch_size: int = 64
    loss_weights: tuple = (1.0, 1.0, 1.0)   # classifier, symmetry, box
    seed: int = 0
    T: int = 3
    feature_dim: int = 80
    decoder_hidden: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.1
    aug_noise_sigma: float = 0.0            # train-time keypoint jitter
    aug_engine_drop: float = 0.0            # train-time engine dropout
    type_features: bool = True
    val_iou_resolution: int = 32
    max_depth: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0 or self.lr_step <= 0 or self.lr_decay <= 0:
            raise SymhrecError("learning rate schedule values must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise SymhrecError("epochs and batch_size must be positive")
        if any(w < 0 for w in self.loss_weights):
            raise SymhrecError("loss weights must be non-negative")
        if self.weight_decay < 0:
            raise SymhrecError("weight decay must be non-negative")

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        if "loss_weights" in kwargs:
            kwargs["loss_weights"] = tuple(kwargs["loss_weights"])
        return cls(**kwargs)


def learning_rate_at(cfg: TrainingConfig, epoch: int) -> float:
    return cfg.learning_rate * cfg.lr_decay ** (epoch // cfg.lr_step)


class Adam:
    """Adam moments with decoupled weight decay applied at step time."""

    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}

    def step(self, params: ModelParams, lr: float, weight_decay: float = 0.0):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.named_tensors():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if weight_decay:
                p.data -= lr * weight_decay * p.data
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainState:
    params: ModelParams
    adam: Adam
    config: TrainingConfig
    epoch: int = 0
    history: list = field(default_factory=list)
    best_val: float = float("inf")
    best_epoch: int = -1
    best_snapshot: dict = field(default_factory=dict)


def new_state(cfg: TrainingConfig) -> TrainState:
    params = ModelParams(d=cfg.feature_dim, T=cfg.T, hidden=cfg.decoder_hidden,
                         seed=derive_seed(cfg.seed, "init"))
    adam = Adam(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    return TrainState(params=params, adam=adam, config=cfg)


def _augmented_view(sample: PreparedSample, cfg: TrainingConfig, epoch: int):
    """Per-epoch degraded copy of a training sample; the ground-truth tree
    is re-normalized into the perturbed record's frame."""
    seed = derive_seed(cfg.seed, f"aug:{epoch}:{sample.sample_id}")
    rec = perturb_record(sample.record_raw, cfg.aug_noise_sigma, cfg.aug_engine_drop, seed)
    center, scale = frame_of(rec)
    return build_graph(rec), normalize_tree(sample.tree_raw, center, scale)


def _snapshot(params: ModelParams) -> dict:
    snap = {f"param/{n}": t.data.copy() for n, t in params.named_tensors()}
    snap.update({f"buffer/{n}": a.copy() for n, a in params.buffer_arrays()})
    return snap


def restore_snapshot(params: ModelParams, snap: dict):
    for name, t in params.named_tensors():
        t.data = snap[f"param/{name}"].copy()
    for name, _ in params.buffer_arrays():
        params.set_buffer(name, snap[f"buffer/{name}"])


def validation_pass(state: TrainState, val_samples):
    """Teacher-forced loss plus free-decoding metrics in eval mode."""
    cfg = state.config
    losses = []
    ious = []
    smss = []
    n_valid = 0
    for s in val_samples:
        enc = encode(s.graph, state.params, training=False, type_features=cfg.type_features)
        out = decode_teacher_forced(enc.r, s.gt_tree, state.params)
        total, _ = loss_from_outputs(out, cfg.loss_weights)
        losses.append(total.item())
        pred = decode_free(enc.r, state.params, cfg.max_depth)
        if not validate_tree(pred):
            n_valid += 1
        ious.append(voxel_iou(pred, s.gt_tree, cfg.val_iou_resolution))
        smss.append(sms_metric(pred, s.gt_tree))
    return {
        "val_loss": float(np.mean(losses)),
        "val_iou": float(np.mean(ious)),
        "val_sms": float(np.mean(smss)),
        "val_valid_frac": n_valid / max(len(val_samples), 1),
    }


def _single_threaded_blas():
    """BLAS thread fan-out loses on this model's tiny matrices; cap it when
    threadpoolctl is available (also keeps reductions order-stable)."""
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1, user_api="blas")
    except ImportError:
        import contextlib

        return contextlib.nullcontext()


def train(train_samples, val_samples, cfg: TrainingConfig,
          state: TrainState = None, log=None) -> TrainState:
    """Run (or resume) training.  Returns the final state; the best
    parameters by validation loss live in state.best_snapshot."""
    if not train_samples or not val_samples:
        raise SymhrecError("train and validation splits must be non-empty")
    if state is None:
        state = new_state(cfg)
    with _single_threaded_blas():
        return _train_loop(train_samples, val_samples, cfg, state, log)


def _train_loop(train_samples, val_samples, cfg, state, log):
    params = state.params
    augment = cfg.aug_noise_sigma > 0 or cfg.aug_engine_drop > 0

    for epoch in range(state.epoch, cfg.epochs):
        lr = learning_rate_at(cfg, epoch)
        order = np.random.default_rng(derive_seed(cfg.seed, f"shuffle:{epoch}")
                                      ).permutation(len(train_samples))
        loss_sum = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0 : b0 + cfg.batch_size]
            batch_no = b0 // cfg.batch_size
            params.zero_grads()
            updates = []
            graphs = []
            trees = []
            for idx in batch:
                s = train_samples[int(idx)]
                if augment:
                    graph, gt_tree = _augmented_view(s, cfg, epoch)
                else:
                    graph, gt_tree = s.graph, s.gt_tree
                graphs.append(graph)
                trees.append(gt_tree)
            packed = make_batch(graphs, with_types=cfg.type_features)
            r_batch = encode_batch(packed, params, training=True, updates=updates)
            out = decode_teacher_forced_batch(r_batch, trees, params)
            total, _ = batch_loss(out, cfg.loss_weights)
            if not np.isfinite(total.item()):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            total.backward()
            loss_sum += total.item() * len(batch)
            for name, p in params.named_tensors():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NumericError(
                        f"non-finite gradient in {name} at epoch {epoch}, batch {batch_no}"
                    )
            state.adam.step(params, lr, cfg.weight_decay)
            commit_bn_updates(updates, cfg.bn_momentum)

        metrics = validation_pass(state, val_samples)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / len(order),
            **metrics,
        }
        state.history.append(row)
        if metrics["val_loss"] < state.best_val:
            state.best_val = metrics["val_loss"]
            state.best_epoch = epoch
            state.best_snapshot = _snapshot(params)
        state.epoch = epoch + 1
        if log is not None:
            log(row)
    return state


def history_csv(history) -> str:
    lines = ["epoch,lr,train_loss,val_loss,val_IoU,val_SMS"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['lr']:.8g},{row['train_loss']:.8f},"
            f"{row['val_loss']:.8f},{row['val_iou']:.6f},{row['val_sms']:.6f}"
        )
    return "\n".join(lines) + "\n"


# -- checkpoint container ----------------------------------------------------


def _meta_to_array(meta: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def _meta_from_array(arr: np.ndarray) -> dict:
    return json.loads(bytes(arr.tobytes()).decode("utf-8"))


def save_checkpoint(path, state: TrainState, use_best: bool = False):
    """Versioned npz holding every named tensor, batch-norm buffer, Adam
    moment and the config echo.  Round-trips bit-exactly (float64)."""
    params = state.params
    arrays = {}
    if use_best and state.best_snapshot:
        arrays.update(state.best_snapshot)
    else:
        arrays.update(_snapshot(params))
    for name in state.adam.m:
        arrays[f"adam_m/{name}"] = state.adam.m[name]
        arrays[f"adam_v/{name}"] = state.adam.v[name]
    if state.best_snapshot and not use_best:
        arrays.update({f"best/{k}": v for k, v in state.best_snapshot.items()})
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "adam_t": state.adam.t,
        "epoch": state.epoch,
        "history": state.history,
        "best_val": state.best_val if np.isfinite(state.best_val) else None,
        "best_epoch": state.best_epoch,
        "saved_best_params": bool(use_best),
        "rng": {"scheme": "sha256(seed:purpose)", "seed": state.config.seed},
    }
    arrays["meta"] = _meta_to_array(meta)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> TrainState:
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    meta = _meta_from_array(arrays.pop("meta"))
    if meta["version"] != CHECKPOINT_VERSION:
        raise SymhrecError(f"unsupported checkpoint version {meta['version']}")
    cfg = TrainingConfig.from_dict(meta["config"])
    state = new_state(cfg)
    for name, t in state.params.named_tensors():
        t.data = arrays[f"param/{name}"].astype(np.float64, copy=True)
    for name, _ in state.params.buffer_arrays():
        state.params.set_buffer(name, arrays[f"buffer/{name}"])
    for name in state.adam.m:
        if f"adam_m/{name}" in arrays:
            state.adam.m[name] = arrays[f"adam_m/{name}"].astype(np.float64, copy=True)
            state.adam.v[name] = arrays[f"adam_v/{name}"].astype(np.float64, copy=True)
    state.adam.t = meta["adam_t"]
    state.epoch = meta["epoch"]
    state.history = meta["history"]
    state.best_val = meta["best_val"] if meta["best_val"] is not None else float("inf")
    state.best_epoch = meta["best_epoch"]
    best = {k[len("best/"):]: v for k, v in arrays.items() if k.startswith("best/")}
    if best:
        state.best_snapshot = {k: v.astype(np.float64, copy=True) for k, v in best.items()}
    elif meta.get("saved_best_params"):
        state.best_snapshot = _snapshot(state.params)
    return state
