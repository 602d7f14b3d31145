"""Acceptance criteria, one test each; a summary line per criterion is printed
at the end of the pytest run (and inline with ``-s``)."""

import dataclasses
import filecmp
import json
import math
import os
import time

import numpy as np
import pytest

from mttppi import cli, embedder, metrics, model, pipeline, seqio
from mttppi.embedder import GATES, MlstmWeights
from mttppi.seqio import ALPHABET
from mttppi.synthetic import case_study_family, multitask_family, separable_family, write_bundle

from conftest import ACCEPTANCE
from helpers import random_instance
from oracles import ap_ranks, auc_pairs, finite_difference, max_relative_error, mlstm_reference, welch_reference


def verdict(num, title, ok, detail):
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE.append((num, title, status, detail))
    print(f"[{status}] {num}. {title}: {detail}")
    assert ok, detail


def test_01_gradient_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    n = 25
    for seed in range(n):
        state, vh, hh = random_instance(1000 + seed)
        _, grads = model.backward(state, vh, hh)
        numeric = finite_difference(lambda: model.total_loss(state, vh, hh), state.params, eps=1e-5)
        worst = max(worst, max_relative_error(grads, numeric))
    dt = time.perf_counter() - t0
    verdict(1, "gradient exactness", worst < 1e-4 and dt < 30,
            f"{n} models, max rel err {worst:.2e} (< 1e-4), {dt:.1f}s (< 30s)")


def test_02_loss_decomposition():
    worst = 0.0
    for seed in range(20):
        state, vh, hh = random_instance(2000 + seed, alpha=0.0)
        base = model.total_loss(state, vh, hh)
        l2 = model.loss_hh(state, hh)
        for alpha in (0.0, 1e-3, 1e-2, 1e-1, 1.0):
            state.config = state.config.replace(alpha=alpha)
            worst = max(worst, abs(model.total_loss(state, vh, hh) - base - alpha * l2))
    verdict(2, "loss decomposition", worst < 1e-12, f"max |L(a) - L(0) - a*L2| = {worst:.1e} (< 1e-12)")


def test_03_metric_oracles():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 51))
        scores = (rng.integers(0, 6, size=n) / 6 if rng.random() < 0.5 else rng.random(n)).tolist()
        labels = rng.integers(0, 2, size=n)
        labels[rng.integers(n)] = 1
        labels[(np.flatnonzero(labels == 1)[0] + 1) % n] = 0
        labels = labels.tolist()
        if metrics.auc(scores, labels) != auc_pairs(scores, labels):
            mismatches += 1
        if metrics.average_precision(scores, labels) != ap_ranks(scores, labels):
            mismatches += 1
    a, b = [85, 86, 87, 88], [80, 81, 82, 83]
    t, p = metrics.welch_ttest(a, b)
    t_ref, p_ref = welch_reference(a, b)
    err = max(abs(t - t_ref), abs(p - p_ref))
    verdict(3, "metric oracle equivalence", mismatches == 0 and err < 1e-6,
            f"200 sets, {mismatches} AUC/AP mismatches; Welch t={t:.6f} p={p:.3e}, max err {err:.1e} (< 1e-6)")


def test_04_mlstm_correctness():
    one = np.ones((1, 1))
    unit = MlstmWeights(one, one, {g: one for g in GATES}, {g: one for g in GATES},
                        {g: np.zeros(1) for g in GATES}, np.ones((len(ALPHABET), 1)))
    hand = float(embedder.embed_sequence(unit, [0])[0])
    rng = np.random.default_rng(4)
    ref_err = 0.0
    for k in range(50):
        w = embedder.random_weights(int(rng.integers(1, 5)), int(rng.integers(1, 6)), seed=k, scale=1.5)
        toks = rng.integers(0, 21, size=int(rng.integers(1, 6))).tolist()
        ref_err = max(ref_err, float(np.max(np.abs(embedder.embed_sequence(w, toks) - mlstm_reference(w, toks)))))
    bounded = True
    for k in range(50):
        w = embedder.random_weights(int(rng.integers(1, 9)), 4, seed=500 + k, scale=float(rng.uniform(0.1, 10)))
        out = embedder.embed_sequence(w, rng.integers(0, 21, size=int(rng.integers(1, 400))).tolist())
        bounded &= bool(np.all(np.isfinite(out)) and np.all(np.abs(out) < 1))
    ok = abs(hand - 0.3696) <= 1e-3 and ref_err <= 1e-6 and bounded
    verdict(4, "mLSTM correctness", ok,
            f"H=1 example {hand:.6f} (0.3696 +/- 1e-3); reference max err {ref_err:.1e} (<= 1e-6); "
            f"outputs finite and in (-1,1): {bounded}")


def test_05_overfit():
    t0 = time.perf_counter()
    bundle, table = separable_family(n_pairs=50, seed=0)
    cfg = model.TrainConfig(alpha=0.0, lr=1e-2, hid=16, epochs=500, batch_size=256, seed=0, select="last")
    _, res = pipeline.train(bundle, cfg, table)
    dt = time.perf_counter() - t0
    hit = [ep for ep, f1, l1 in res.history if l1 < 0.05 and f1 == 100.0]
    first = hit[0] if hit else None
    verdict(5, "overfit sanity", first is not None and dt < 10,
            f"training L1 < 0.05 with validation F1 = 100 first at epoch {first} (<= 500); "
            f"final L1 {res.history[-1][2]:.4f}, {dt:.1f}s (< 10s)")


def test_06_multitask_benefit():
    t0 = time.perf_counter()
    aucs = {0.0: [], 1e-2: []}
    for seed in range(10):
        bundle, table = multitask_family(n_vh_train=40, n_hh=2000, n_vh_test=200, seed=seed)
        for alpha in aucs:
            cfg = model.TrainConfig(alpha=alpha, lr=1e-2, hid=16, epochs=400, seed=seed, select="last")
            _, res = pipeline.train(bundle, cfg, table)
            aucs[alpha].append(res.metrics.auc)
    t, p = metrics.welch_ttest(aucs[1e-2], aucs[0.0])
    dt = time.perf_counter() - t0
    mtt, stt = np.mean(aucs[1e-2]), np.mean(aucs[0.0])
    verdict(6, "multitask benefit", mtt > stt and p < 0.05 and dt < 300,
            f"mean test AUC MTT {mtt:.4f} vs STT {stt:.4f}, Welch t={t:.3f} p={p:.2e} (< 0.05), {dt:.1f}s (< 300s)")


def test_07_protocol_counts():
    bundle, table = multitask_family(n_vh_train=40, n_hh=0, n_vh_test=40, n_human=200, seed=7)
    pos_only = dataclasses.replace(
        bundle,
        vh_train=[e for e in bundle.vh_train if e.target == 1.0],
        vh_test=[e for e in bundle.vh_test if e.target == 1.0],
    )
    trained = []

    def counting_train(b, cfg, emb, tables=None):
        trained.append(cfg)
        return pipeline.train(b, cfg, emb, tables=tables)

    rates = pipeline.NEGATIVE_RATES
    cfg = model.TrainConfig(alpha=0.0, lr=1e-2, hid=4, epochs=1, seed=0)
    rep = pipeline.repeated_runs(pos_only, pipeline.SamplingSpec(rate=1, repeats=10, seed=0), cfg, table,
                                 train_rates=rates, test_rates=rates, train_fn=counting_train)
    n_eval = sum(1 for r in rep.runs if r.metrics is not None)

    grid_runs = []

    def grid_train(b, c, emb, tables=None):
        state, res = pipeline.train(b, c, emb, tables=tables)
        grid_runs.append([h[0] for h in res.history])
        return state, res

    small, stab = separable_family(n_pairs=20, seed=1)
    pipeline.grid_search(small, pipeline.GridSpec(), stab, train_fn=grid_train)
    scans_ok = all(h == list(range(0, 201, 2)) for h in grid_runs)
    ok = n_eval == 160 and len(grid_runs) == 32 and scans_ok
    verdict(7, "protocol counts", ok,
            f"repeated runs: {n_eval} evaluations from {len(trained)} trainings (160 expected); "
            f"default grid: {len(grid_runs)} runs (32), epoch scan 0..200 step 2 in every run: {scans_ok}")


def _tree_bytes(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as fh:
            out[name] = fh.read()
    return out


def test_08_determinism(tmp_path, capsys):
    bundle, table = separable_family(n_pairs=60, seed=2)
    bundle = dataclasses.replace(bundle, vh_test=bundle.vh_train[40:], vh_train=bundle.vh_train[:40])
    manifest = write_bundle(bundle, table, str(tmp_path / "data"))
    weights = tmp_path / "w.txt"
    embedder.save_mlstm_weights(embedder.random_weights(6, 4, seed=8), str(weights))
    exp = tmp_path / "exp.json"
    exp.write_text(json.dumps({"data": manifest, "n_runs": 2,
                               "config": {"lr": 1e-2, "hid": 8, "epochs": 30, "alpha": 0.0, "seed": 5},
                               "grid": {"hid": [4, 8], "alpha": [0.0], "lr": [1e-2], "epoch_max": 20}}))
    results = tmp_path / "results"
    results.mkdir()

    def all_commands(root):
        root.mkdir()
        codes = [
            cli.main(["embed", "--weights", str(weights), "--fasta", str(tmp_path / "data" / "virus.fasta"),
                      str(tmp_path / "data" / "human.fasta"), "--out", str(root / "emb.tsv"), "--parallel", "3"]),
            cli.main(["train", "--config", str(exp), "--out", str(root / "train")]),
            cli.main(["gridsearch", "--config", str(exp), "--out", str(root / "grid")]),
            cli.main(["evaluate", "--checkpoint", str(root / "train" / "run_000.ckpt"),
                      "--test", str(tmp_path / "data" / "vh_test.tsv"), "--out", str(root / "eval.json")]),
            cli.main(["rank", "--checkpoint", str(root / "train" / "run_*.ckpt"), "--runs", "2",
                      "--virus-protein", bundle.vh_test[0].a, "--candidates", str(tmp_path / "data" / "human.fasta.ids"),
                      "--true-id", bundle.vh_test[0].b, "--out", str(root / "rank.json")]),
            cli.main(["ttest", "--a", str(root / "train" / "run_*.json"), "--b", str(root / "train" / "run_*.json")]),
        ]
        stdout = capsys.readouterr().out
        files = {}
        for dirpath, _, names in os.walk(root):
            for n in names:
                p = os.path.join(dirpath, n)
                with open(p, "rb") as fh:
                    files[os.path.relpath(p, root)] = fh.read()
        return codes, stdout, files

    (tmp_path / "data" / "human.fasta.ids").write_text("".join(h + "\n" for h in bundle.human_ids))
    codes_a, out_a, files_a = all_commands(tmp_path / "a")
    codes_b, out_b, files_b = all_commands(tmp_path / "b")
    same_files = files_a == files_b
    same_out = out_a.replace(str(tmp_path / "a"), "") == out_b.replace(str(tmp_path / "b"), "")
    ok = codes_a == codes_b == [0] * 6 and same_files and same_out
    verdict(8, "determinism", ok,
            f"6 commands run twice, exit codes {codes_a}; {len(files_a)} artifacts byte-identical: {same_files}; "
            f"stdout identical: {same_out}")


RELEASE_EXPECT = {
    "zhou_h1n1": {"train": {"E+": 10858}, "test": {"E+": 381}},
    "zhou_ebola": {"train": {"E+": 11341}, "test": {"E+": 150}},
    "novel_h1n1": {"train": {"V^h": 7636}, "test": {"V^h": 622}},
}


def test_09_data_audit():
    root = os.environ.get("PPI_MTT_RELEASE_DIR")
    found = {name: os.path.join(root, name, "manifest.json") for name in RELEASE_EXPECT} if root else {}
    found = {k: v for k, v in found.items() if os.path.exists(v)}
    if not found:
        ACCEPTANCE.append((9, "data audit", "SKIP",
                           "public release files absent (set PPI_MTT_RELEASE_DIR to <dir>/<dataset>/manifest.json)"))
        pytest.skip("release files absent")
    problems = []
    for name, path in sorted(found.items()):
        bundle, _ = seqio.load_manifest(path)
        problems += [f"{name}: {p}" for p in seqio.audit(bundle.report, RELEASE_EXPECT[name])]
    verdict(9, "data audit", not problems,
            f"audited {sorted(found)}; " + ("all counts match" if not problems else "; ".join(problems)))


def test_10_ranking_protocol(tmp_path, capsys):
    bundle, table, cands, query, receptor = case_study_family(n_candidates=52, seed=0)
    tables = pipeline.split_tables(bundle, table)
    for r in range(10):
        cfg = model.TrainConfig(alpha=0.0, lr=1e-2, hid=16, epochs=50, seed=r)
        state, _ = pipeline.train(bundle, cfg, table, tables=tables)
        model.save_checkpoint(state, str(tmp_path / f"seed_{r:02d}.ckpt"))
    cand_file = tmp_path / "candidates.txt"
    cand_file.write_text("".join(c + "\n" for c in cands))
    out = tmp_path / "rank.json"
    code = cli.main(["rank", "--checkpoint", str(tmp_path / "seed_*.ckpt"), "--runs", "10",
                     "--virus-protein", query, "--candidates", str(cand_file), "--true-id", receptor,
                     "--out", str(out)])
    capsys.readouterr()
    rep = json.loads(out.read_text()) if code == 0 else {}
    topk = rep.get("topk", [])
    frac = rep.get("topk_run_fraction", [])
    ok = code == 0 and len(rep["ranking"]) == 52 and topk == [True] * 10 and frac == [1.0] * 10
    verdict(10, "ranking protocol", ok,
            f"52 candidates, 10 runs: top1..top10 {topk}; per-run hit fraction {frac[:1]}..{frac[-1:]}")
