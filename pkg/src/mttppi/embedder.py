"""mLSTM sequence embeddings and embedding-table persistence."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DimMismatch,
    DuplicateId,
    EmptySequence,
    MalformedHeader,
    MissingTensor,
    NonFiniteValue,
    ShapeMismatch,
)
from .seqio import ALPHABET
from .tensorio import read_tensors, write_tensors

_TOKEN = {c: i for i, c in enumerate(ALPHABET)}
GATES = ("i", "f", "o", "u")
TENSOR_NAMES = ("vocab_embed", "W_mx", "W_mh") + tuple(
    f"{p}_{g}{s}" if p == "W" else f"b_{g}"
    for g in GATES
    for p, s in (("W", "x"), ("W", "m"), ("b", ""))
)


def tokenize(sequence):
    """Map residues to indices: canonical letters alphabetically, ``X`` last."""
    try:
        return [_TOKEN[c] for c in sequence]
    except KeyError as exc:
        raise ValueError(f"residue {exc.args[0]!r} is not normalized") from None


@dataclass(frozen=True)
class MlstmWeights:
    """One mLSTM layer.

    ``vocab_embed`` is ``None`` for a stacked layer fed by the hidden states
    of the layer below.  Gate inputs are ``W_gx x_t + W_gm m_t + b_g``.
    """

    W_mx: np.ndarray
    W_mh: np.ndarray
    W_x: dict
    W_m: dict
    b: dict
    vocab_embed: np.ndarray | None = None

    @property
    def hidden(self):
        return self.W_mh.shape[0]

    @property
    def input_dim(self):
        return self.W_mx.shape[1]

    def packed(self):
        """Gate matrices stacked i, f, o, u along rows, as float64."""
        wx = np.ascontiguousarray(np.vstack([self.W_x[g] for g in GATES]), dtype=np.float64)
        wm = np.ascontiguousarray(np.vstack([self.W_m[g] for g in GATES]), dtype=np.float64)
        bias = np.concatenate([self.b[g] for g in GATES]).astype(np.float64)
        return wx, wm, bias

    def tensors(self):
        out = {}
        if self.vocab_embed is not None:
            out["vocab_embed"] = self.vocab_embed
        out["W_mx"] = self.W_mx
        out["W_mh"] = self.W_mh
        for g in GATES:
            out[f"W_{g}x"] = self.W_x[g]
            out[f"W_{g}m"] = self.W_m[g]
            out[f"b_{g}"] = self.b[g].reshape(-1, 1)
        return out


def weights_from_tensors(tensors, require_vocab=True):
    names = [n for n in TENSOR_NAMES if require_vocab or n != "vocab_embed"]
    for n in names:
        if n not in tensors:
            raise MissingTensor(n)
    for n, t in tensors.items():
        if not np.all(np.isfinite(t)):
            raise NonFiniteValue(f"tensor {n!r} has non-finite entries")

    hdim = tensors["W_mh"].shape[0]
    vocab = tensors.get("vocab_embed")
    if vocab is not None:
        if vocab.shape[0] < len(ALPHABET):
            raise ShapeMismatch(f"vocab_embed has {vocab.shape[0]} rows, need {len(ALPHABET)}")
        in_dim = vocab.shape[1]
    else:
        in_dim = tensors["W_mx"].shape[1]

    expect = {"W_mx": (hdim, in_dim), "W_mh": (hdim, hdim)}
    for g in GATES:
        expect[f"W_{g}x"] = (hdim, in_dim)
        expect[f"W_{g}m"] = (hdim, hdim)
        expect[f"b_{g}"] = (hdim, 1)
    for n, shape in expect.items():
        if tensors[n].shape != shape:
            raise ShapeMismatch(
                f"tensor {n!r} is {tensors[n].shape[0]}x{tensors[n].shape[1]}, "
                f"expected {shape[0]}x{shape[1]} for H={hdim}"
            )
    return MlstmWeights(
        W_mx=tensors["W_mx"],
        W_mh=tensors["W_mh"],
        W_x={g: tensors[f"W_{g}x"] for g in GATES},
        W_m={g: tensors[f"W_{g}m"] for g in GATES},
        b={g: tensors[f"b_{g}"].ravel() for g in GATES},
        vocab_embed=vocab,
    )


def load_mlstm_weights(path, require_vocab=True):
    """Load one layer from the named-tensor text format."""
    tensors, _ = read_tensors(path)
    return weights_from_tensors(tensors, require_vocab=require_vocab)


def load_mlstm_stack(paths):
    """Load chained layers; only the first carries ``vocab_embed``."""
    layers = [load_mlstm_weights(p, require_vocab=(i == 0)) for i, p in enumerate(paths)]
    for lower, upper in zip(layers, layers[1:]):
        if upper.input_dim != lower.hidden:
            raise ShapeMismatch(
                f"stacked layer expects input dim {upper.input_dim}, lower layer has H={lower.hidden}"
            )
    return layers


def save_mlstm_weights(weights, path):
    write_tensors(path, weights.tensors())


def random_weights(hidden, embed_dim=10, seed=0, scale=0.5):
    """Small random weights for tests and smoke runs."""
    rng = np.random.default_rng(seed)

    def mat(r, c):
        return rng.uniform(-scale, scale, size=(r, c))

    return MlstmWeights(
        W_mx=mat(hidden, embed_dim),
        W_mh=mat(hidden, hidden),
        W_x={g: mat(hidden, embed_dim) for g in GATES},
        W_m={g: mat(hidden, hidden) for g in GATES},
        b={g: rng.uniform(-scale, scale, size=hidden) for g in GATES},
        vocab_embed=mat(len(ALPHABET), embed_dim),
    )


def _layer_states(weights, inputs):
    wx, wm, bias = weights.packed()
    xm = np.ascontiguousarray(inputs @ weights.W_mx.astype(np.float64).T)
    xg = np.ascontiguousarray(inputs @ wx.T + bias)
    w_mh = np.ascontiguousarray(weights.W_mh, dtype=np.float64)
    return _kernels.mlstm_scan(xm, xg, w_mh, wm)


def embed_sequence(weights, tokens, pool="avg"):
    """Embed one token list; ``weights`` is a layer or a list of chained layers.

    Starts from zero hidden and cell state and pools the top layer's hidden
    states by their mean (``pool="avg"``) or takes the final one (``"last"``).
    """
    if len(tokens) == 0:
        raise EmptySequence("cannot embed an empty sequence")
    layers = weights if isinstance(weights, (list, tuple)) else [weights]
    x = np.asarray(layers[0].vocab_embed, dtype=np.float64)[np.asarray(tokens)]
    for layer in layers:
        x = _layer_states(layer, np.ascontiguousarray(x))
    if pool == "avg":
        return x.mean(axis=0)
    if pool == "last":
        return x[-1].copy()
    raise ValueError(f"unknown pooling {pool!r}")


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise DimMismatch(f"embedding dim must be positive, got {self.dim}")
        for pid, vec in list(self.entries.items()):
            self.entries[pid] = self._check(pid, vec)

    def _check(self, pid, vec):
        vec = np.asarray(vec, dtype=np.float32).ravel()
        if vec.shape[0] != self.dim:
            raise DimMismatch(f"{pid!r}: {vec.shape[0]} components, table dim {self.dim}")
        if not np.all(np.isfinite(vec)):
            raise NonFiniteValue(f"{pid!r}: non-finite embedding")
        return vec

    def __len__(self):
        return len(self.entries)

    def __contains__(self, pid):
        return pid in self.entries

    def __getitem__(self, pid):
        return self.entries[pid]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.entries.keys() == other.entries.keys()
            and all(np.array_equal(v, other.entries[k]) for k, v in self.entries.items())
        )

    def add(self, pid, vec):
        if pid in self.entries:
            raise DuplicateId(f"duplicate protein id {pid!r}")
        self.entries[pid] = self._check(pid, vec)

    def ids(self):
        return sorted(self.entries)

    def matrix(self, ids=None):
        ids = self.ids() if ids is None else ids
        if not ids:
            return np.zeros((0, self.dim))
        return np.stack([self.entries[i] for i in ids]).astype(np.float64)

    def subset(self, ids):
        return EmbeddingTable(self.dim, {i: self.entries[i] for i in ids})


def default_parallelism():
    env = os.environ.get("PPI_MTT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def embed_batch(weights, records, parallelism=None, pool="avg"):
    """Embed records into an :class:`EmbeddingTable` keyed by id.

    Each sequence is independent, so the table is identical for any
    ``parallelism``; rows are inserted in sorted-id order.
    """
    layers = weights if isinstance(weights, (list, tuple)) else [weights]
    dim = layers[-1].hidden
    seen = set()
    for rec in records:
        if rec.id in seen:
            raise DuplicateId(f"duplicate protein id {rec.id!r}")
        seen.add(rec.id)
    ordered = sorted(records, key=lambda r: r.id)

    def one(rec):
        try:
            return embed_sequence(layers, tokenize(rec.sequence), pool=pool)
        except EmptySequence:
            raise EmptySequence(f"record {rec.id!r} has no residues") from None

    workers = parallelism or default_parallelism()
    if workers <= 1 or len(ordered) <= 1:
        vectors = [one(r) for r in ordered]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            vectors = list(ex.map(one, ordered))
    table = EmbeddingTable(dim)
    for rec, vec in zip(ordered, vectors):
        table.add(rec.id, vec)
    return table


def _fmt(v):
    # shortest text that reads back to the same float32, subnormals included
    return str(np.float32(v))


def write_embeddings(table, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim={table.dim}\n")
        for pid in table.ids():
            fh.write(pid + "\t" + " ".join(_fmt(v) for v in table.entries[pid]) + "\n")


def read_embeddings(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise MalformedHeader(f"{path}: first line must be 'dim=<D>', got {header!r}")
        try:
            dim = int(header[4:])
        except ValueError:
            raise MalformedHeader(f"{path}: bad dimension in {header!r}") from None
        if dim < 1:
            raise MalformedHeader(f"{path}: dimension must be positive")
        table = EmbeddingTable(dim)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            pid, sep, rest = line.partition("\t")
            if not sep:
                raise DimMismatch(f"{path}:{lineno}: missing tab after id")
            try:
                values = [float(v) for v in rest.split()]
            except ValueError:
                raise DimMismatch(f"{path}:{lineno}: non-numeric component") from None
            if len(values) != dim:
                raise DimMismatch(f"{path}:{lineno}: {len(values)} values, expected {dim}")
            table.add(pid, values)
    return table
