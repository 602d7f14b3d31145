"""Synthetic bundles for smoke runs and statistical checks."""

from __future__ import annotations

import json
import os

import numpy as np

from .embedder import EmbeddingTable, write_embeddings
from .seqio import CANONICAL, DatasetBundle, InteractionExample, ProteinRecord, Role, format_fasta, format_interactions


def _records(ids, role, rng, length=30):
    return {
        pid: ProteinRecord(pid, "".join(rng.choice(list(CANONICAL), size=length)), role)
        for pid in ids
    }


def separable_family(n_pairs=50, dim=8, margin=1.5, seed=0, name="separable"):
    """Pathogen-human pairs over distinct proteins with a separable label.

    The label is the sign of the human embedding's projection on a fixed
    direction (at distance ``margin``), so a linear model on the
    concatenated embeddings separates it exactly.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    p_ids = [f"v{i:03d}" for i in range(n_pairs)]
    h_ids = [f"h{i:03d}" for i in range(n_pairs)]
    xp = rng.normal(size=(n_pairs, dim))
    xh = rng.normal(size=(n_pairs, dim))
    xh -= np.outer(xh @ direction, direction)
    labels = np.arange(n_pairs) % 2 == 0
    xh += np.where(labels, margin, -margin)[:, None] * direction
    pairs = [InteractionExample(p_ids[k], h_ids[k], 1.0 if labels[k] else 0.0) for k in range(n_pairs)]
    proteins = {**_records(p_ids, Role.VIRUS, rng), **_records(h_ids, Role.HUMAN, rng)}
    table = EmbeddingTable(dim, {**dict(zip(p_ids, xp)), **dict(zip(h_ids, xh))})
    return DatasetBundle(name, proteins, pairs, [], []), table


def multitask_family(
    n_vh_train=40,
    n_hh=2000,
    n_vh_test=200,
    n_clusters=2,
    n_human=200,
    n_pathogen=8,
    n_target_clusters=1,
    dim=16,
    signal=0.3,
    noise=1.0,
    hh_in=1.0,
    hh_out=0.0,
    seed=0,
    name="multitask",
):
    """Human proteins carry latent clusters that drive both tasks.

    A human's pretrained embedding is its cluster centre scaled by ``signal``
    plus Gaussian ``noise``.  HH confidence is ``hh_in`` within a cluster and
    ``hh_out`` across clusters.  Pathogen ``i`` binds the humans of cluster
    ``i % n_target_clusters``, so VH labels depend only on the human's cluster
    given the pathogen.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_clusters, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True) / np.sqrt(dim)
    h_cluster = rng.integers(0, n_clusters, size=n_human)
    xh = signal * centres[h_cluster] + noise * rng.normal(size=(n_human, dim))
    p_cluster = np.arange(n_pathogen) % n_target_clusters
    xp = rng.normal(size=(n_pathogen, dim))
    p_ids = [f"v{i:03d}" for i in range(n_pathogen)]
    h_ids = [f"h{i:04d}" for i in range(n_human)]

    def vh_pairs(n, used):
        out = []
        while len(out) < n:
            want = len(out) % 2 == 0
            v = int(rng.integers(n_pathogen))
            h = int(rng.integers(n_human))
            if (v, h) in used or (h_cluster[h] == p_cluster[v]) != want:
                continue
            used.add((v, h))
            out.append(InteractionExample(p_ids[v], h_ids[h], 1.0 if want else 0.0))
        return out

    used = set()
    train = vh_pairs(n_vh_train, used)
    test = vh_pairs(n_vh_test, used)
    hh, seen = [], set()
    while len(hh) < n_hh:
        a, b = (int(x) for x in rng.integers(n_human, size=2))
        key = (min(a, b), max(a, b))
        if a == b or key in seen:
            continue
        seen.add(key)
        z = hh_in if h_cluster[a] == h_cluster[b] else hh_out
        hh.append(InteractionExample(h_ids[a], h_ids[b], float(z)))
    proteins = {**_records(p_ids, Role.VIRUS, rng), **_records(h_ids, Role.HUMAN, rng)}
    table = EmbeddingTable(dim, {**dict(zip(p_ids, xp)), **dict(zip(h_ids, xh))})
    return DatasetBundle(name, proteins, train, test, hh), table


def case_study_family(n_candidates=52, n_train_humans=200, dim=8, seed=0, name="case_study"):
    """A pathogen with one true receptor among ``n_candidates`` human proteins.

    Training pairs teach that humans whose embedding aligns with a shared
    receptor direction interact with pathogens; the held-out pathogen
    ``query`` is then ranked against the candidates, of which only
    ``receptor`` carries that direction.  Returns ``(bundle, table,
    candidates, query, receptor)``.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)

    def human(binder):
        x = 0.3 * rng.normal(size=dim)
        x -= (x @ direction) * direction
        return x + (2.0 if binder else -1.0) * direction

    n_p = 20
    p_ids = [f"p{i:02d}" for i in range(n_p)] + ["query"]
    xp = np.vstack([direction + 0.3 * rng.normal(size=(n_p + 1, dim))])
    h_ids = [f"t{i:03d}" for i in range(n_train_humans)]
    binders = rng.random(n_train_humans) < 0.5
    xh = [human(b) for b in binders]
    cand_ids = ["receptor"] + [f"c{i:02d}" for i in range(n_candidates - 1)]
    xh += [human(True)] + [human(False) for _ in range(n_candidates - 1)]

    train = []
    for i, hid in enumerate(h_ids):
        v = p_ids[int(rng.integers(n_p))]
        train.append(InteractionExample(v, hid, 1.0 if binders[i] else 0.0))
    all_h = h_ids + cand_ids
    proteins = {**_records(p_ids, Role.VIRUS, rng), **_records(all_h, Role.HUMAN, rng)}
    table = EmbeddingTable(dim, {**dict(zip(p_ids, xp)), **dict(zip(all_h, xh))})
    return DatasetBundle(name, proteins, train, [], []), table, cand_ids, "query", "receptor"


def write_bundle(bundle, table, directory):
    """Write FASTA, interaction tables, embeddings and a manifest; return the manifest path."""
    os.makedirs(directory, exist_ok=True)
    fasta = {}
    for role in Role:
        recs = [r for _, r in sorted(bundle.proteins.items()) if r.role is role]
        if recs:
            fname = f"{role.value}.fasta"
            with open(os.path.join(directory, fname), "w", encoding="utf-8") as fh:
                fh.write(format_fasta(recs))
            fasta[role.value] = fname
    inter = {}
    for split in ("vh_train", "vh_test", "hh_train"):
        fname = f"{split}.tsv"
        with open(os.path.join(directory, fname), "w", encoding="utf-8") as fh:
            fh.write(format_interactions(getattr(bundle, split)))
        inter[split] = fname
    write_embeddings(table, os.path.join(directory, "embeddings.tsv"))
    manifest = {"name": bundle.name, "fasta": fasta, "interactions": inter,
                "embeddings": "embeddings.tsv", "max_length": None}
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path
