"""Acceptance gate: every criterion as one test with a pass/fail summary line.

Criteria are oracle- and property-based; the desk-scale run exercises the
whole pipeline end to end on the synthetic corpus.
"""

import json
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from mvmdd.af_inventory import (
    AF_FB,
    AF_HL,
    AF_M,
    AF_P,
    AF_STREAMS,
    CONSONANT_MANNERS,
    STREAM_CLASSES,
    load_af_table,
)
from mvmdd.cli import main
from mvmdd.corpusio import (
    UtteranceRecord,
    load_manifest,
    read_features,
    write_features,
    write_manifest,
)
from mvmdd.ctc import ctc_brute_force, ctc_loss, is_feasible
from mvmdd.evalmetrics import MddCounts, mdd_counts, metrics, per
from mvmdd.netops import ModelParams, NetConfig, backward, forward
from mvmdd.trainer import PR, Sequential, active_tasks


@contextmanager
def criterion(recorder, number, name):
    try:
        yield
    except BaseException:
        recorder(f"[criterion {number}] {name}: FAIL")
        raise
    recorder(f"[criterion {number}] {name}: PASS")


def test_criterion_1_ctc_oracle_equivalence(acceptance_recorder):
    with criterion(acceptance_recorder, 1, "CTC oracle equivalence"):
        rng = np.random.default_rng(20240801)
        start = time.perf_counter()
        checked = 0
        while checked < 200:
            t = int(rng.integers(1, 7))       # T <= 6
            v = int(rng.integers(2, 5))       # V <= 4
            n = int(rng.integers(1, 4))       # |target| <= 3
            target = rng.integers(1, v, size=n).tolist()
            if not is_feasible(t, target):
                continue
            logits = rng.normal(scale=2.0, size=(t, v))
            probs = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs /= probs.sum(axis=1, keepdims=True)
            exact = ctc_brute_force(probs, target)
            got = ctc_loss(np.log(probs), target).loss
            assert abs(got - exact) <= 1e-9
            checked += 1
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0, f"took {elapsed:.1f}s"


TINY = NetConfig(pool_dim=60, conv_kernel=16, conv_stride=4, conv_channels=2,
                 d_emb=16, af_hidden=8, n_phones=5)


def _tiny_loss(stacked, params, pr_target, af_target):
    pr_logits, af_logits, _ = forward(stacked, params, TINY)
    return (ctc_loss(pr_logits, pr_target).loss
            + ctc_loss(af_logits[AF_M], af_target).loss)


def test_criterion_2_gradient_fidelity(acceptance_recorder):
    with criterion(acceptance_recorder, 2, "end-to-end gradient fidelity"):
        h = 1e-5
        start = time.perf_counter()
        for seed in range(20):
            rng = np.random.default_rng(500 + seed)
            params = ModelParams.initialize(TINY, rng)
            stacked = rng.normal(size=(12, TINY.pool_dim, 2))
            pr_target = rng.integers(1, TINY.n_phones + 1, size=3).tolist()
            af_target = rng.integers(1, 8, size=3).tolist()
            pr_logits, af_logits, cache = forward(stacked, params, TINY)
            pr_res = ctc_loss(pr_logits, pr_target)
            af_res = ctc_loss(af_logits[AF_M], af_target)
            grads = backward(pr_res.grad_logits, {AF_M: af_res.grad_logits},
                             params, cache)
            grad_map = dict(grads.named_arrays())
            for name, arr in params.named_arrays():
                flat = arr.reshape(-1)
                g_flat = grad_map[name].reshape(-1)
                idx = rng.choice(flat.size, size=min(8, flat.size), replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    up = _tiny_loss(stacked, params, pr_target, af_target)
                    flat[i] = orig - h
                    down = _tiny_loss(stacked, params, pr_target, af_target)
                    flat[i] = orig
                    numeric = (up - down) / (2 * h)
                    rel = abs(g_flat[i] - numeric) / max(abs(g_flat[i]) + abs(numeric), 1e-5)
                    assert rel <= 1e-4, f"{name}[{i}] rel={rel:.2e} seed={seed}"
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


def test_criterion_3_af_inventory(acceptance_recorder):
    with criterion(acceptance_recorder, 3, "articulatory inventory"):
        table = load_af_table()
        assert len(STREAM_CLASSES[AF_M]) == 7
        assert len(STREAM_CLASSES[AF_P]) == 6
        assert len(STREAM_CLASSES[AF_HL]) == 4
        assert len(STREAM_CLASSES[AF_FB]) == 4
        assert len(table.inventory.phones) == 39
        for phone in table.inventory.phones:
            manner, place, hl, fb = table.signature(phone)
            assert manner in STREAM_CLASSES[AF_M]
            assert place in STREAM_CLASSES[AF_P]
            assert hl in STREAM_CLASSES[AF_HL]
            assert fb in STREAM_CLASSES[AF_FB]
            if manner == "vowel":
                assert hl != "nil" and fb != "nil"
            elif manner in CONSONANT_MANNERS:
                assert hl == "nil" and fb == "nil"
            else:
                assert (manner, place, hl, fb) == ("silence", "nil", "nil", "nil")
        assert [table.class_name(AF_M, p) for p in ("P", "T", "K")] == ["stop"] * 3
        assert [table.class_name(AF_P, p) for p in ("P", "T", "K")] == [
            "bilabial", "alveolar", "velar"]


def test_criterion_4_scheduler_timeline(acceptance_recorder):
    with criterion(acceptance_recorder, 4, "scheduler timeline"):
        s = Sequential(warmup=2000, interval=2000)
        for step in range(10000):
            tasks = set(active_tasks(step, s))
            if step < 2000:
                assert tasks == {PR}
            elif step < 4000:
                assert tasks == {PR, AF_M}
            elif step < 6000:
                assert tasks == {PR, AF_P}
            elif step < 8000:
                assert tasks == {PR, AF_HL}
            else:
                assert tasks == {PR, AF_FB}
        for warmup, interval in ((1, 1), (3, 7), (400, 400), (2000, 2000)):
            strat = Sequential(warmup=warmup, interval=interval)
            for step in range(0, 12000, 13):
                assert len(active_tasks(step, strat)) <= 2


def test_criterion_5_metric_formulas(acceptance_recorder):
    with criterion(acceptance_recorder, 5, "metric formulas"):
        m = metrics(MddCounts(tr=2, fa=1, fr=1), per_value=0.0)
        assert m.recall == 2 / 3 and m.precision == 2 / 3 and m.f1 == 2 / 3
        assert per(["P", "T", "K"], ["P", "K"]) == 1 / 3
        c = mdd_counts(["S", "IH", "T"], ["S", "AH", "T"], ["S", "AH", "T"])
        assert (c.ta, c.tr, c.fa, c.fr, c.tr_correct_diag) == (2, 1, 0, 0, 1)
        c = mdd_counts(["S", "IH", "T"], ["S", "AH", "T"], ["S", "IH", "T"])
        assert (c.ta, c.fa, c.tr, c.fr) == (2, 1, 0, 0)
        c = mdd_counts(["S", "IH", "T"], ["S", "IH", "T"], ["S", "EH", "T"])
        assert (c.ta, c.fr) == (2, 1)


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk") / "data"
    assert main(["gen-data", "--seed", "7", "--rho", "0.15", "--sigma", "0.3",
                 "--train", "400", "--dev", "50", "--test", "50",
                 "--out", str(out)]) == 0
    return out


def _phases_in_log(log_path):
    phases = []
    for line in Path(log_path).read_text().splitlines():
        rec = json.loads(line)
        if "active_tasks" in rec and (not phases or phases[-1] != rec["active_tasks"]):
            phases.append(rec["active_tasks"])
    return phases


def test_criterion_6_desk_scale_learning(acceptance_recorder, desk_corpus,
                                         tmp_path_factory):
    with criterion(acceptance_recorder, 6, "desk-scale learning"):
        runs = tmp_path_factory.mktemp("desk_runs")
        start = time.perf_counter()
        seq_out = runs / "seq"
        assert main(["train", "--data", str(desk_corpus), "--out", str(seq_out),
                     "--steps", "2000", "--warmup", "400", "--interval", "400",
                     "--batch", "8", "--lr", "1e-3", "--strategy", "seq",
                     "--seed", "7"]) == 0
        all_out = runs / "all"
        assert main(["train", "--data", str(desk_corpus), "--out", str(all_out),
                     "--steps", "2000", "--warmup", "400", "--interval", "400",
                     "--batch", "8", "--lr", "1e-3", "--strategy", "all",
                     "--seed", "7"]) == 0
        elapsed = time.perf_counter() - start
        assert elapsed < 15 * 60, f"training took {elapsed:.0f}s"

        evals = [json.loads(l) for l in (seq_out / "log.jsonl").read_text().splitlines()
                 if "dev_per" in l]
        best = min(r["dev_per"] for r in evals)
        assert best <= 0.10, f"dev PER {best:.4f}"
        assert _phases_in_log(seq_out / "log.jsonl") == [
            ["PR"], ["PR", "AF_M"], ["PR", "AF_P"], ["PR", "AF_HL"], ["PR", "AF_FB"]]
        assert (all_out / "checkpoint.mvcp").exists()
        assert _phases_in_log(all_out / "log.jsonl") == [
            ["PR", "AF_M", "AF_P", "AF_HL", "AF_FB"]]


def test_criterion_7_reproducibility(acceptance_recorder, tmp_path_factory):
    with criterion(acceptance_recorder, 7, "byte-identical reproducibility"):
        base = tmp_path_factory.mktemp("repro")
        data = base / "data"
        run = base / "run"
        report = base / "report.json"
        captured = []
        for _ in range(2):  # same paths both legs, so configs are identical
            for stale in (data, run):
                if stale.exists():
                    shutil.rmtree(stale)
            if report.exists():
                report.unlink()
            assert main(["gen-data", "--seed", "21", "--out", str(data),
                         "--train", "16", "--dev", "6", "--test", "6",
                         "--mono-dim", "320", "--multi-dim", "384"]) == 0
            assert main(["train", "--data", str(data), "--out", str(run),
                         "--steps", "40", "--lr", "1e-3", "--batch", "8",
                         "--seed", "21", "--eval-every", "10",
                         "--d-emb", "32", "--af-hidden", "16",
                         "--conv-channels", "4"]) == 0
            assert main(["evaluate", "--ckpt", str(run / "checkpoint.mvcp"),
                         "--manifest", str(data / "test.jsonl"),
                         "--out", str(report)]) == 0
            captured.append(((run / "checkpoint.mvcp").read_bytes(),
                             report.read_bytes()))
        assert captured[0][0] == captured[1][0], "checkpoints differ"
        assert captured[0][1] == captured[1][1], "reports differ"


def test_criterion_8_format_roundtrips(acceptance_recorder, tmp_path):
    with criterion(acceptance_recorder, 8, "format round-trips"):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(17, 33)).astype(np.float32)
        p1 = tmp_path / "one.mvft"
        p2 = tmp_path / "two.mvft"
        write_features(x, p1)
        write_features(read_features(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

        records = [
            UtteranceRecord("u0", ("P", "T", "K"), ("P", "K", "K"),
                            "u0.mono.mvft", "u0.multi.mvft", 9),
            UtteranceRecord("u1", ("IY", "S"), ("IY", "S"),
                            "u1.mono.mvft", "u1.multi.mvft", 5),
        ]
        m1 = tmp_path / "one.jsonl"
        m2 = tmp_path / "two.jsonl"
        write_manifest(records, m1)
        write_manifest(load_manifest(m1, check_features=False), m2)
        assert m1.read_bytes() == m2.read_bytes()
