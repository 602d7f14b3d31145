"""Two-tower multitask model with hand-written gradients and Adam.

Pathogen proteins go through the MLP ``theta``, human proteins through
``phi``.  A pair is scored as ``sigmoid(sum(hid_a * hid_b * w))`` with head
``w1`` for pathogen-human pairs and ``w2`` for human-human pairs.  The human
embedding table and ``phi`` are shared by both tasks.
"""

from __future__ import annotations

import copy
import dataclasses
import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from . import _kernels
from .embedder import EmbeddingTable
from .errors import ConfigError, DimMismatch, MissingTensor, ShapeMismatch, UnknownProtein
from .tensorio import read_tensors, write_tensors

EPS_CLAMP = 1e-7
# clamping y to [EPS, 1-EPS] is clamping the logit to [-LOGIT_CLAMP, LOGIT_CLAMP]
LOGIT_CLAMP = float(np.log1p(-EPS_CLAMP) - np.log(EPS_CLAMP))
PARAM_NAMES = ("x_pathogen", "x_human", "theta_W", "theta_b", "phi_W", "phi_b", "w1", "w2")


class Task(str, enum.Enum):
    VH = "vh"
    HH = "hh"


@dataclass
class TrainConfig:
    alpha: float = 1e-3
    lr: float = 1e-3
    hid: int = 16
    epochs: int = 200
    seed: int = 0
    batch_size: int = 256
    l1_reduction: str = "mean"
    eval_stride: int = 1
    val_fraction: float = 0.1
    threshold: float = 0.5
    select: str = "best"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"lr must be finite and > 0, got {self.lr}")
        for name in ("hid", "batch_size", "eval_stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if int(self.epochs) < 0:
            raise ConfigError("epochs must be >= 0")
        if self.l1_reduction not in ("mean", "sum"):
            raise ConfigError(f"l1_reduction must be 'mean' or 'sum', got {self.l1_reduction!r}")
        if self.select not in ("best", "last"):
            raise ConfigError(f"select must be 'best' or 'last', got {self.select!r}")
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigError("val_fraction must lie strictly between 0 and 1")

    @property
    def variant(self):
        return "STT" if self.alpha == 0 else "MTT"

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def init(self, params):
        for k, p in params.items():
            self.m[k] = np.zeros_like(p, dtype=np.float64)
            self.v[k] = np.zeros_like(p, dtype=np.float64)
        return self

    def step(self, params, grads):
        for k, g in grads.items():
            if k not in params:
                raise ShapeMismatch(f"gradient for unknown parameter {k!r}")
            if np.shape(g) != np.shape(params[k]):
                raise ShapeMismatch(f"{k}: gradient shape {np.shape(g)} != parameter shape {np.shape(params[k])}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k], dtype=np.float64)
                self.v[k] = np.zeros_like(params[k], dtype=np.float64)
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


class PairBatch(NamedTuple):
    task: Task
    a: np.ndarray
    b: np.ndarray
    z: np.ndarray

    def __len__(self):
        return len(self.z)

    def take(self, idx):
        return PairBatch(self.task, self.a[idx], self.b[idx], self.z[idx])


@dataclass
class ModelState:
    config: TrainConfig
    pathogen_ids: list
    human_ids: list
    params: dict
    adam: Adam = field(repr=False, default=None)

    def __post_init__(self):
        self.p_index = {pid: i for i, pid in enumerate(self.pathogen_ids)}
        self.h_index = {pid: i for i, pid in enumerate(self.human_ids)}
        if self.adam is None:
            self.adam = Adam(lr=self.config.lr)

    @property
    def step(self):
        return self.adam.t

    def copy(self):
        return copy.deepcopy(self)

    def index_of(self, pid, human):
        table = self.h_index if human else self.p_index
        try:
            return table[pid]
        except KeyError:
            side = "human" if human else "pathogen"
            raise UnknownProtein(pid, f"not in the {side} embedding table") from None

    def encode(self, task, examples):
        task = Task(task)
        a_human = task is Task.HH
        a = np.array([self.index_of(e.a, a_human) for e in examples], dtype=np.int64)
        b = np.array([self.index_of(e.b, True) for e in examples], dtype=np.int64)
        z = np.array([e.target for e in examples], dtype=np.float64)
        return PairBatch(task, a, b, z)

    def embedding_tables(self):
        p = self.params
        return (
            EmbeddingTable(p["x_pathogen"].shape[1], dict(zip(self.pathogen_ids, p["x_pathogen"]))),
            EmbeddingTable(p["x_human"].shape[1], dict(zip(self.human_ids, p["x_human"]))),
        )


def _glorot(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(config, pathogen_table, human_table, seed=None):
    """Fresh state: embedding tables copied, Glorot-uniform weights, zero biases."""
    if pathogen_table.dim != human_table.dim:
        raise DimMismatch(f"pathogen table dim {pathogen_table.dim} != human table dim {human_table.dim}")
    d = pathogen_table.dim
    hid = int(config.hid)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    p_ids = pathogen_table.ids()
    h_ids = human_table.ids()
    params = {
        "x_pathogen": pathogen_table.matrix(p_ids).reshape(len(p_ids), d),
        "x_human": human_table.matrix(h_ids).reshape(len(h_ids), d),
        "theta_W": _glorot(rng, d, hid, (d, hid)),
        "theta_b": np.zeros(hid),
        "phi_W": _glorot(rng, d, hid, (d, hid)),
        "phi_b": np.zeros(hid),
        "w1": _glorot(rng, hid, 1, (hid,)),
        "w2": _glorot(rng, hid, 1, (hid,)),
    }
    return ModelState(config, p_ids, h_ids, params, Adam(lr=config.lr).init(params))


def _as_batch(state, task, batch):
    if isinstance(batch, PairBatch):
        return batch
    return state.encode(task, batch)


def _side(state, task, which):
    """(embedding name, W name, b name) for side ``which`` of a task."""
    if task is Task.VH and which == "a":
        return "x_pathogen", "theta_W", "theta_b"
    return "x_human", "phi_W", "phi_b"


def _forward(state, batch):
    p = state.params
    xa_name, wa, ba = _side(state, batch.task, "a")
    xb_name, wb, bb = _side(state, batch.task, "b")
    xa = p[xa_name][batch.a]
    xb = p[xb_name][batch.b]
    pre_a = xa @ p[wa] + p[ba]
    pre_b = xb @ p[wb] + p[bb]
    ha = np.maximum(pre_a, 0.0)
    hb = np.maximum(pre_b, 0.0)
    w = p["w1"] if batch.task is Task.VH else p["w2"]
    s = (ha * hb) @ w
    y = expit(s)
    return dict(xa=xa, xb=xb, pre_a=pre_a, pre_b=pre_b, ha=ha, hb=hb, s=s, y=y)


def tower_forward(state, side, pid):
    """Hidden vector ``relu(X(v) W + b)``; ``side`` is ``"pathogen"`` or ``"human"``."""
    human = str(side).lower() == "human"
    p = state.params
    x = p["x_human" if human else "x_pathogen"][state.index_of(pid, human)]
    pre = x @ p["phi_W" if human else "theta_W"] + p["phi_b" if human else "theta_b"]
    return np.maximum(pre, 0.0)


def score_batch(state, task, batch):
    batch = _as_batch(state, Task(task), batch)
    if len(batch) == 0:
        return np.zeros(0)
    return _forward(state, batch)["y"]


def score_pair(state, task, a, b):
    from .seqio import InteractionExample

    return float(score_batch(state, task, [InteractionExample(a, b, 0.0)])[0])


def _bce(s, z, reduction):
    """Cross entropy from logits; -log(y) = softplus(-s), -log(1-y) = softplus(s)."""
    sc = np.clip(s, -LOGIT_CLAMP, LOGIT_CLAMP)
    terms = z * np.logaddexp(0.0, -sc) + (1.0 - z) * np.logaddexp(0.0, sc)
    total = terms.sum()
    return total / len(z) if reduction == "mean" else total


def loss_vh(state, batch):
    batch = _as_batch(state, Task.VH, batch)
    if len(batch) == 0:
        return 0.0
    s = _forward(state, batch)["s"]
    return float(_bce(s, batch.z, state.config.l1_reduction))


def loss_hh(state, batch):
    batch = _as_batch(state, Task.HH, batch)
    if len(batch) == 0:
        return 0.0
    y = _forward(state, batch)["y"]
    return float(np.mean((y - batch.z) ** 2))


def total_loss(state, vh_batch, hh_batch):
    l1 = loss_vh(state, vh_batch)
    alpha = state.config.alpha
    if alpha == 0:
        return l1
    return l1 + alpha * loss_hh(state, hh_batch)


def _accumulate(state, grads, batch, fwd, g_s):
    """Back-propagate d(loss)/d(logit) through head, towers and embeddings."""
    p = state.params
    xa_name, wa, ba = _side(state, batch.task, "a")
    xb_name, wb, bb = _side(state, batch.task, "b")
    w_name = "w1" if batch.task is Task.VH else "w2"
    w = p[w_name]
    ha, hb = fwd["ha"], fwd["hb"]
    grads[w_name] += g_s @ (ha * hb)
    # relu'(0) := 0
    d_pre_a = (g_s[:, None] * hb * w) * (fwd["pre_a"] > 0)
    d_pre_b = (g_s[:, None] * ha * w) * (fwd["pre_b"] > 0)
    grads[wa] += fwd["xa"].T @ d_pre_a
    grads[ba] += d_pre_a.sum(axis=0)
    grads[wb] += fwd["xb"].T @ d_pre_b
    grads[bb] += d_pre_b.sum(axis=0)
    _kernels.scatter_add_rows(grads[xa_name], batch.a, np.ascontiguousarray(d_pre_a @ p[wa].T))
    _kernels.scatter_add_rows(grads[xb_name], batch.b, np.ascontiguousarray(d_pre_b @ p[wb].T))


def backward(state, vh_batch, hh_batch):
    """Exact gradients of ``L1 + alpha * L2``; returns ``(loss, grads)``."""
    p = state.params
    grads = {k: np.zeros_like(p[k]) for k in PARAM_NAMES}
    cfg = state.config
    loss = 0.0

    vh = _as_batch(state, Task.VH, vh_batch)
    if len(vh):
        fwd = _forward(state, vh)
        y = fwd["y"]
        loss += float(_bce(fwd["s"], vh.z, cfg.l1_reduction))
        inside = np.abs(fwd["s"]) < LOGIT_CLAMP
        g_s = (y - vh.z) * inside
        if cfg.l1_reduction == "mean":
            g_s = g_s / len(vh)
        _accumulate(state, grads, vh, fwd, g_s)

    if cfg.alpha != 0:
        hh = _as_batch(state, Task.HH, hh_batch)
        if len(hh):
            fwd = _forward(state, hh)
            y = fwd["y"]
            loss += cfg.alpha * float(np.mean((y - hh.z) ** 2))
            g_s = cfg.alpha * 2.0 * (y - hh.z) * y * (1.0 - y) / len(hh)
            _accumulate(state, grads, hh, fwd, g_s)
    return loss, grads


def adam_step(state, grads):
    state.adam.step(state.params, grads)
    return state


# ---------------------------------------------------------------------------
# naive baseline: logistic regression on [X(v); X(h)]


@dataclass
class LogisticModel:
    w: np.ndarray
    b: float = 0.0

    def score(self, features):
        return expit(features @ self.w + self.b)


def _concat_features(embeddings, examples):
    if isinstance(embeddings, (tuple, list)):
        p_tab, h_tab = embeddings
        if p_tab.dim != h_tab.dim:
            raise DimMismatch(f"pathogen dim {p_tab.dim} != human dim {h_tab.dim}")
    else:
        p_tab = h_tab = embeddings
    rows = []
    for e in examples:
        if e.a not in p_tab:
            raise UnknownProtein(e.a)
        if e.b not in h_tab:
            raise UnknownProtein(e.b)
        rows.append(np.concatenate([p_tab[e.a], h_tab[e.b]]))
    width = 2 * p_tab.dim
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def naive_baseline_fit(embeddings, vh_train, config):
    """Fit logistic regression on frozen concatenated embeddings with Adam/BCE.

    Examples are put in canonical (sorted) order before the seeded shuffle,
    so the fit does not depend on input order.
    """
    examples = sorted(vh_train, key=lambda e: (e.a, e.b, e.target))
    x = _concat_features(embeddings, examples)
    z = np.array([e.target for e in examples])
    params = {"w": np.zeros(x.shape[1]), "b": np.zeros(1)}
    opt = Adam(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = len(z)
    bs = min(int(config.batch_size), max(n, 1))
    for _ in range(int(config.epochs)):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            s = x[idx] @ params["w"] + params["b"][0]
            y = expit(s)
            inside = np.abs(s) < LOGIT_CLAMP
            g = (y - z[idx]) * inside / len(idx)
            opt.step(params, {"w": x[idx].T @ g, "b": np.array([g.sum()])})
    return LogisticModel(params["w"], float(params["b"][0]))


def naive_baseline_score(model, embeddings, pairs):
    """Scores for an iterable of examples (or a single one)."""
    single = not isinstance(pairs, (list, tuple))
    examples = [pairs] if single else list(pairs)
    y = model.score(_concat_features(embeddings, examples))
    return float(y[0]) if single else y


def naive_baseline_loss(model, embeddings, examples):
    x = _concat_features(embeddings, examples)
    z = np.array([e.target for e in examples])
    return float(_bce(x @ model.w + model.b, z, "mean"))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state, path, extra=None):
    meta = {
        "config": state.config.to_dict(),
        "step": state.step,
        "pathogen_ids": list(state.pathogen_ids),
        "human_ids": list(state.human_ids),
        "variant": state.config.variant,
    }
    if extra:
        meta.update(extra)
    write_tensors(path, {k: state.params[k] for k in PARAM_NAMES}, meta=meta)


def load_checkpoint(path):
    tensors, meta = read_tensors(path)
    if meta is None:
        raise MissingTensor("meta")
    for k in PARAM_NAMES:
        if k not in tensors:
            raise MissingTensor(k)
    config = TrainConfig.from_dict(meta["config"])
    params = {k: tensors[k] for k in PARAM_NAMES}
    for k in ("theta_b", "phi_b", "w1", "w2"):
        params[k] = params[k].ravel()
    p_ids, h_ids = meta["pathogen_ids"], meta["human_ids"]
    d = params["theta_W"].shape[0]
    params["x_pathogen"] = params["x_pathogen"].reshape(len(p_ids), d)
    params["x_human"] = params["x_human"].reshape(len(h_ids), d)
    if params["phi_W"].shape != params["theta_W"].shape:
        raise ShapeMismatch("theta_W and phi_W shapes differ")
    state = ModelState(config, p_ids, h_ids, params, Adam(lr=config.lr).init(params))
    state.adam.t = int(meta.get("step", 0))
    return state
