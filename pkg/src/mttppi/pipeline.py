"""Experimental protocol: negative sampling, validation split, training loop,
grid search and repeated seeded runs."""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .embedder import EmbeddingTable
from .errors import ConfigError, EmptyTrainingSet, InsufficientUniverse, TooFewExamples, UnknownProtein
from .metrics import ExperimentReport, evaluate, prf1
from .seqio import DatasetBundle, InteractionExample

log = logging.getLogger(__name__)

NEGATIVE_RATES = (1, 2, 5, 10)
METRIC_KEYS = ("auc", "ap", "precision", "recall", "f1")
_ENUMERATE_LIMIT = 2_000_000


def derive_seed(*parts):
    """Stable 64-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SamplingSpec:
    rate: int = 1
    repeats: int = 10
    seed: int = 0
    clamp: bool = False

    def __post_init__(self):
        if int(self.rate) < 1:
            raise ConfigError("sampling rate must be a positive integer")
        if int(self.repeats) < 1:
            raise ConfigError("sampling repeats must be a positive integer")


def sample_negatives(positives, pathogen_ids, human_ids, spec, exclude=()):
    """Draw ``rate * len(positives)`` distinct non-positive pairs uniformly.

    The universe is ``pathogen_ids x human_ids`` minus the positive pairs
    (and any pairs in ``exclude``).  Returned examples have target 0 and
    come in draw order.
    """
    p_ids = sorted(set(pathogen_ids))
    h_ids = sorted(set(human_ids))
    n_h = len(h_ids)
    p_pos = {pid: i for i, pid in enumerate(p_ids)}
    h_pos = {pid: i for i, pid in enumerate(h_ids)}
    forbidden = set()
    for e in itertools.chain(positives, exclude):
        if e.a in p_pos and e.b in h_pos:
            forbidden.add(p_pos[e.a] * n_h + h_pos[e.b])
    total = len(p_ids) * n_h
    universe = total - len(forbidden)
    need = int(spec.rate) * len(positives)
    if need > universe:
        if not spec.clamp:
            raise InsufficientUniverse(
                f"need {need} negatives but only {universe} non-positive pairs exist"
            )
        log.warning("negative universe has %d pairs, %d requested; returning all of it", universe, need)
        need = universe
    if need == 0:
        return []

    rng = np.random.default_rng(spec.seed)
    if total <= _ENUMERATE_LIMIT or 2 * need >= universe:
        allowed = np.setdiff1d(np.arange(total, dtype=np.int64),
                               np.fromiter(forbidden, dtype=np.int64, count=len(forbidden)),
                               assume_unique=True)
        picked = rng.choice(allowed, size=need, replace=False)
    else:
        chosen = set()
        picked = []
        while len(picked) < need:
            for c in rng.integers(0, total, size=2 * (need - len(picked)) + 16):
                c = int(c)
                if c in forbidden or c in chosen:
                    continue
                chosen.add(c)
                picked.append(c)
                if len(picked) == need:
                    break
    return [InteractionExample(p_ids[int(i) // n_h], h_ids[int(i) % n_h], 0.0) for i in picked]


def make_validation_split(examples, fraction=0.1, seed=0):
    """Stratified random split; each class sends ``ceil(fraction * n)`` to validation.

    Both parts keep the input order.
    """
    if not (0.0 < fraction < 1.0):
        raise ConfigError("validation fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    labels = np.array([e.target >= 0.5 for e in examples], dtype=bool)
    in_val = np.zeros(len(examples), dtype=bool)
    for cls in (True, False):
        idx = np.flatnonzero(labels == cls)
        # tolerance keeps e.g. 0.1 * 100 from rounding up to 11
        k = math.ceil(fraction * len(idx) - 1e-9)
        name = "positive" if cls else "negative"
        if k < 1 or k >= len(idx):
            raise TooFewExamples(
                f"{len(idx)} {name} examples cannot fill both training and validation parts"
            )
        in_val[rng.choice(idx, size=k, replace=False)] = True
    train = [e for e, v in zip(examples, in_val) if not v]
    val = [e for e, v in zip(examples, in_val) if v]
    return train, val


@dataclass
class RunResult:
    metrics: ExperimentReport | None
    best_epoch: int
    val_f1: float
    config: M.TrainConfig
    seed: int
    history: list = field(default_factory=list)
    tags: dict = field(default_factory=dict)
    wall_seconds: float = field(default=0.0, compare=False)

    @property
    def variant(self):
        return self.config.variant

    def to_dict(self):
        # wall-clock time is left out so artifacts are reproducible byte for byte
        return {
            "variant": self.variant,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "best_epoch": self.best_epoch,
            "val_f1": self.val_f1,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "history": [list(h) for h in self.history],
            "tags": dict(self.tags),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            metrics=None if d.get("metrics") is None else ExperimentReport.from_dict(d["metrics"]),
            best_epoch=d["best_epoch"],
            val_f1=d["val_f1"],
            config=M.TrainConfig.from_dict(d["config"]),
            seed=d["seed"],
            history=[tuple(h) for h in d.get("history", [])],
            tags=d.get("tags", {}),
        )


def split_tables(bundle, embeddings):
    """Pathogen and human tables restricted to the bundle's proteins."""
    if isinstance(embeddings, (tuple, list)):
        p_src, h_src = embeddings
    else:
        p_src = h_src = embeddings
    referenced = set()
    for e in itertools.chain(bundle.vh_train, bundle.vh_test, bundle.hh_train):
        referenced.update((e.a, e.b))
    for pid in sorted(referenced):
        rec = bundle.proteins.get(pid)
        if rec is None:
            raise UnknownProtein(pid, f"not in bundle {bundle.name!r}")
        src = p_src if rec.role.is_pathogen else h_src
        if pid not in src:
            raise UnknownProtein(pid, "no embedding")
    p_ids = [p for p in bundle.pathogen_ids if p in p_src]
    h_ids = [p for p in bundle.human_ids if p in h_src]
    return (
        EmbeddingTable(p_src.dim, {p: p_src[p] for p in p_ids}),
        EmbeddingTable(h_src.dim, {p: h_src[p] for p in h_ids}),
    )


def evaluate_state(state, examples, threshold=0.5, r_precision=False):
    y = M.score_batch(state, M.Task.VH, examples)
    labels = [e.target for e in examples]
    return evaluate(y, labels, threshold, r_precision)


def _val_f1(state, batch, threshold):
    return prf1(M.score_batch(state, M.Task.VH, batch), batch.z, threshold)[2]


def train(bundle, config, embeddings, tables=None):
    """Train one model; returns ``(state at best validation epoch, RunResult)``.

    Epoch 0 evaluates the initialised model.  Validation F1 is checked every
    ``config.eval_stride`` epochs and the earliest best epoch wins, unless
    ``config.select == "last"`` keeps the final state.  The
    history holds ``(epoch, validation F1, training L1)`` per checked epoch.
    """
    if not bundle.vh_train:
        raise EmptyTrainingSet(f"bundle {bundle.name!r} has no training pairs")
    t0 = time.perf_counter()
    cfg = config
    p_tab, h_tab = tables if tables is not None else split_tables(bundle, embeddings)
    tr, val = make_validation_split(bundle.vh_train, cfg.val_fraction, derive_seed(cfg.seed, 1))
    state = M.init_model(cfg, p_tab, h_tab)

    tr_b = state.encode(M.Task.VH, tr)
    val_b = state.encode(M.Task.VH, val)
    hh_b = state.encode(M.Task.HH, bundle.hh_train)
    vh_rng = np.random.default_rng(derive_seed(cfg.seed, 2))
    hh_rng = np.random.default_rng(derive_seed(cfg.seed, 3))
    use_hh = cfg.alpha != 0 and len(hh_b) > 0
    hh_order = hh_rng.permutation(len(hh_b)) if use_hh else None
    hh_cursor = 0
    n = len(tr_b)
    bs = min(int(cfg.batch_size), n)
    empty_hh = hh_b.take(np.zeros(0, dtype=np.int64))

    best_f1 = _val_f1(state, val_b, cfg.threshold)
    best_epoch = 0
    best_params = {k: v.copy() for k, v in state.params.items()}
    best_step = 0
    history = [(0, best_f1, M.loss_vh(state, tr_b))]
    for epoch in range(1, int(cfg.epochs) + 1):
        order = vh_rng.permutation(n)
        for start in range(0, n, bs):
            vb = tr_b.take(order[start : start + bs])
            if use_hh:
                k = len(vb)
                idx = hh_order[(hh_cursor + np.arange(k)) % len(hh_order)]
                hh_cursor = (hh_cursor + k) % len(hh_order)
                hb = hh_b.take(idx)
            else:
                hb = empty_hh
            _, grads = M.backward(state, vb, hb)
            M.adam_step(state, grads)
        if epoch % cfg.eval_stride == 0:
            f1 = _val_f1(state, val_b, cfg.threshold)
            history.append((epoch, f1, M.loss_vh(state, tr_b)))
            if f1 > best_f1:
                best_f1, best_epoch, best_step = f1, epoch, state.step
                best_params = {k: v.copy() for k, v in state.params.items()}
    if cfg.select == "last":
        best_epoch = int(cfg.epochs)
        best_f1 = _val_f1(state, val_b, cfg.threshold)
    else:
        state.params = best_params
        state.adam.t = best_step

    if bundle.vh_test:
        report = evaluate_state(state, bundle.vh_test, cfg.threshold)
    else:
        report = None
    result = RunResult(
        metrics=report,
        best_epoch=best_epoch,
        val_f1=best_f1,
        config=cfg,
        seed=cfg.seed,
        history=history,
        wall_seconds=time.perf_counter() - t0,
    )
    log.info("%s %s hid=%d alpha=%g lr=%g: best epoch %d, val F1 %.2f",
             bundle.name, cfg.variant, cfg.hid, cfg.alpha, cfg.lr, best_epoch, best_f1)
    return state, result


@dataclass(frozen=True)
class GridSpec:
    hid: tuple = (8, 16, 32, 64)
    alpha: tuple = (1e-3, 1e-2, 1e-1, 1.0)
    lr: tuple = (1e-3, 1e-2)
    epoch_max: int = 200
    epoch_step: int = 2

    def __post_init__(self):
        for name in ("hid", "alpha", "lr"):
            if not getattr(self, name):
                raise ConfigError(f"grid list {name!r} is empty")
        if self.epoch_max < 0 or self.epoch_step < 1:
            raise ConfigError("grid needs epoch_max >= 0 and epoch_step >= 1")

    def combinations(self):
        return list(itertools.product(sorted(self.hid), sorted(self.alpha), sorted(self.lr)))

    def epoch_points(self):
        return list(range(0, self.epoch_max + 1, self.epoch_step))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("hid", "alpha", "lr"):
            if k in d:
                d[k] = tuple(d[k])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def grid_schedule(grid, base_config, seed):
    """One training config per (hid, alpha, lr); epochs are scanned inside each run."""
    return [
        base_config.replace(hid=int(h), alpha=float(a), lr=float(lr), epochs=grid.epoch_max,
                            eval_stride=grid.epoch_step, seed=seed)
        for h, a, lr in grid.combinations()
    ]


def _grid_key(row):
    return (-row["val_f1"], row["hid"], row["alpha"], row["lr"], row["best_epoch"])


def select_best(rows):
    """Highest validation F1; ties go to smaller hid, alpha, lr, then epoch."""
    return min(range(len(rows)), key=lambda i: _grid_key(rows[i]))


@dataclass
class GridResult:
    best: RunResult
    best_state: M.ModelState
    table: list


def grid_search(bundle, grid, embeddings, seed=0, base_config=None, train_fn=None):
    train_fn = train_fn or train
    base = base_config or M.TrainConfig()
    tables = split_tables(bundle, embeddings)
    rows, results, states = [], [], []
    for cfg in grid_schedule(grid, base, seed):
        state, res = train_fn(bundle, cfg, embeddings, tables=tables)
        rows.append({"hid": cfg.hid, "alpha": cfg.alpha, "lr": cfg.lr,
                     "best_epoch": res.best_epoch, "val_f1": res.val_f1})
        results.append(res)
        states.append(state)
    i = select_best(rows)
    return GridResult(results[i], states[i], rows)


@dataclass
class RepeatedResult:
    runs: list
    summary: dict

    def to_dict(self):
        return {"runs": [r.to_dict() for r in self.runs], "summary": self.summary}


def schedule_repeated(n_runs, train_rates, test_rates):
    """Evaluation plan: ``(run, train_rate, test_rate)`` triples."""
    return [(r, tr, te) for r in range(n_runs) for tr in train_rates for te in test_rates]


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def summarize(runs, group_keys=("train_rate", "test_rate")):
    groups = {}
    for r in runs:
        key = "/".join(f"{k}={r.tags.get(k)}" for k in group_keys)
        groups.setdefault(key, []).append(r)
    out = {}
    for key, members in groups.items():
        entry = {"n": len(members)}
        for m in METRIC_KEYS:
            mean, std = _mean_std([getattr(r.metrics, m) for r in members if r.metrics is not None])
            entry[m] = {"mean": mean, "std": std}
        out[key] = entry
    return out


def repeated_runs(bundle, sampling, config, embeddings, n_runs=None,
                  train_rates=None, test_rates=None, train_fn=None):
    """Redraw negatives, retrain and evaluate for each run and rate combination.

    Run ``r`` uses sampling seed ``sampling.seed + r`` and training seed
    ``config.seed + r``.  One model is trained per (run, train rate) and
    evaluated against every test rate.
    """
    train_fn = train_fn or train
    n_runs = sampling.repeats if n_runs is None else n_runs
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    train_rates = tuple(train_rates or (sampling.rate,))
    test_rates = tuple(test_rates or (sampling.rate,))
    train_pos = [e for e in bundle.vh_train if e.target >= 0.5]
    test_pos = [e for e in bundle.vh_test if e.target >= 0.5]
    all_pos = train_pos + test_pos
    tables = split_tables(bundle, embeddings)
    humans = tables[1].ids()
    train_pathogens = sorted({e.a for e in train_pos})
    test_pathogens = sorted({e.a for e in test_pos})

    runs = []
    for r in range(n_runs):
        run_seed = sampling.seed + r
        cfg = config.replace(seed=config.seed + r)
        for tr_rate in train_rates:
            negs = sample_negatives(
                train_pos, train_pathogens, humans,
                replace(sampling, rate=tr_rate, seed=derive_seed(run_seed, 0, tr_rate)),
                exclude=all_pos,
            )
            b = DatasetBundle(bundle.name, bundle.proteins, train_pos + negs, [], bundle.hh_train)
            state, base = train_fn(b, cfg, embeddings, tables=tables)
            for te_rate in test_rates:
                test_negs = sample_negatives(
                    test_pos, test_pathogens, humans,
                    replace(sampling, rate=te_rate, seed=derive_seed(run_seed, 1, te_rate)),
                    exclude=all_pos,
                )
                report = evaluate_state(state, test_pos + test_negs, cfg.threshold) if test_pos else None
                runs.append(replace(base, metrics=report,
                                    tags={"run": r, "train_rate": tr_rate, "test_rate": te_rate}))
    return RepeatedResult(runs, summarize(runs))
