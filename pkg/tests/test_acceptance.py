"""Acceptance gate: ten criteria, one printed pass/fail line each.

Criteria 1-4 and the statistics half of 9 are oracle checks that run in
seconds to a minute. Criteria 5-8 and the end-to-end half of 9 share one
session-scoped benchmark fixture: fifteen 100-epoch desk-scale runs
(standard / cyclic-ortho / cyclic-random x 5 seeds), which dominates the
suite's runtime. Criterion 10 re-runs a small config twice and resumes
from a mid-run checkpoint.

Each test computes its verdict, prints a single [PASS]/[FAIL] line on
the real stdout (past pytest's capture), then asserts.
"""
import os
import sys
import time

import numpy as np
import pytest

from helpers import (brute_ortho_rows, brute_pearson, brute_spearman,
                     fd_gradients, plain_training_loop, random_batch,
                     relative_error, small_model)
from reprune.analysis import pearson, spearman
from reprune.config import parse_config
from reprune.experiment import do_analyze, do_train, load_dataset, \
    optimizer_hyper, resume_train, summarize
from reprune.network import PruneMask, backward, forward, init_model, \
    materialize_mask
from reprune.optim import OptimizerState, step
from reprune.ranking import ortho_matrix, ortho_score
from reprune.scheduler import RngStreams, ortho_loss, ortho_loss_grads, \
    reinit_filters


def _report(num, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {text}"
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


# --- criterion 1: gradients vs central finite differences ---------------

def test_c01_gradients_match_finite_differences():
    t0 = time.time()
    worst = 0.0
    instances = 0

    shapes = [
        (1, 2, 5, 3, False), (1, 3, 5, 3, True), (2, 2, 5, 3, False),
        (2, 3, 6, 4, True), (3, 2, 6, 3, False), (2, 4, 5, 4, True),
        (1, 4, 6, 4, False), (2, 3, 5, 3, True), (3, 3, 6, 4, False),
        (2, 2, 6, 3, True), (1, 3, 6, 4, False), (2, 4, 6, 3, True),
        (3, 2, 5, 4, False), (1, 2, 6, 3, True), (2, 3, 6, 3, False),
        (2, 2, 5, 4, True), (1, 4, 5, 3, False), (3, 3, 5, 3, True),
        (2, 4, 5, 3, False), (1, 3, 5, 4, True),
    ]
    for i, (depth, width, size, classes, bn) in enumerate(shapes):
        model = small_model(depth=depth, width=width, size=size,
                            classes=classes, batch_norm=bn, seed=i)
        # an untrained net has zero biases, which parks dead channels'
        # pre-activations exactly on the ReLU kink where central FD
        # measures the subgradient average; jitter to a generic point
        jit = np.random.default_rng(2000 + i)
        for layer in model.conv_layers:
            layer.bias += jit.uniform(0.02, 0.1, size=layer.bias.shape)
            if layer.bn is not None:
                layer.bn.beta += jit.uniform(0.02, 0.1,
                                             size=layer.bn.beta.shape)
        model.fc_b += jit.uniform(0.02, 0.1, size=model.fc_b.shape)
        mask = PruneMask.full(model)
        if i % 4 == 0 and width > 1:
            mask.rows[0][0] = False      # masked filters get zero grads
        x, y = random_batch(model, n=3, seed=100 + i)
        _, cache = forward(model, mask, x, mode="train")
        _, grads = backward(model, mask, cache, y)
        fd = fd_gradients(model, mask, x, y, eps=1e-5)
        for name in grads:
            if np.abs(grads[name] - fd[name]).max() <= 1e-8:
                continue    # both numerically zero (e.g. bias under BN)
            worst = max(worst, relative_error(grads[name], fd[name]))
        instances += 1

    # the penalty term, by perturbing sampled weight coordinates
    for i in range(4):
        model = small_model(depth=2, width=3, size=5, seed=50 + i)
        _, grads = ortho_loss_grads(model)
        rng = np.random.default_rng(i)
        for l, layer in enumerate(model.conv_layers):
            w = layer.weights
            flat = w.reshape(-1)
            for idx in rng.choice(flat.size, size=8, replace=False):
                old = flat[idx]
                flat[idx] = old + 1e-5
                up = ortho_loss(model)
                flat[idx] = old - 1e-5
                down = ortho_loss(model)
                flat[idx] = old
                fd_g = (up - down) / 2e-5
                an_g = grads[f"conv{l}.w"].reshape(-1)[idx]
                denom = max(abs(fd_g), abs(an_g), 1e-8)
                worst = max(worst, abs(fd_g - an_g) / denom)
        instances += 1

    elapsed = time.time() - t0
    ok = worst < 1e-4 and instances >= 20 and elapsed < 60
    _report(1, ok, f"gradients vs finite differences: {instances} instances, "
                   f"worst rel err {worst:.2e}, {elapsed:.1f}s")


# --- criterion 2: ortho metric vs brute-force oracle ---------------------

def test_c02_ortho_metric_oracle_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    for trial in range(100):
        j = int(rng.integers(1, 65))
        d = int(rng.integers(1, 80))
        bank = rng.normal(size=(j, d))
        if j >= 3:
            bank[1] = bank[0]            # exact duplicate
            bank[2] = 0.0                # dead filter
        p, _ = ortho_matrix(bank)
        assert np.array_equal(p, p.T)
        scores, _ = ortho_score(bank)
        worst = max(worst, np.abs(scores - brute_ortho_rows(bank)).max())

    s_eye, _ = ortho_score(np.eye(3))
    exact_zero = np.abs(s_eye).max() == 0.0
    s_dup, _ = ortho_score(np.array([[1.0, 0.0], [1.0, 0.0]]))
    exact_half = (s_dup == 0.5).all()
    f1 = np.array([1.0, 0.0, 0.0, 0.0])
    f2 = np.array([0.0, 1.0, 0.0, 0.0])
    f3 = (f1 + f2) / np.sqrt(2.0)
    s_mix, _ = ortho_score(np.stack([f1, f2, f3]))
    exact_mix = s_mix[2] == np.sqrt(2.0) / 3.0

    ok = worst < 1e-10 and exact_zero and exact_half and exact_mix
    _report(2, ok, f"ortho vs brute force: 100 banks, worst |diff| "
                   f"{worst:.2e}; worked examples exact "
                   f"({exact_zero}, {exact_half}, {exact_mix})")


# --- criterion 3: re-initialization orthogonality contract ---------------

def test_c03_reinit_orthogonality_contract():
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(100):
        width = int(rng.integers(2, 9))          # J = width < 9 = k*k*c
        model = small_model(depth=2, width=width, size=5, seed=trial)
        mask = PruneMask.full(model)
        drop = []
        # the constraint bank grows by one row per re-draw; keep the
        # total below each layer's filter dimension so null space remains
        caps = (max(1, min(width - 1, 9 - width)), width - 1)
        for l, cap in enumerate(caps):
            count = int(rng.integers(1, cap + 1))
            for f in rng.choice(width, size=count, replace=False):
                mask.rows[l][int(f)] = False
                drop.append((l, int(f)))
        banks = [model.conv_layers[l].weights.reshape(width, -1).copy()
                 for l in range(2)]
        records = reinit_filters(model, drop, mask, 0.1,
                                 np.random.default_rng(1000 + trial))
        assert not any(r.degenerate for r in records)
        new_rows = {0: [], 1: []}
        for l, f in sorted(drop):
            new = model.conv_layers[l].weights.reshape(width, -1)[f]
            new = new / np.linalg.norm(new)
            for row in banks[l]:                 # live + pre-drop values
                worst = max(worst, abs(new @ row / np.linalg.norm(row)))
            for other in new_rows[l]:            # same-event re-draws
                worst = max(worst, abs(new @ other))
            new_rows[l].append(new)

    # J = k*k*c leaves no null space: fallback must fire and be recorded
    model = small_model(depth=1, width=9, size=5, seed=9)
    mask = PruneMask.full(model)
    mask.rows[0][4] = False
    records = reinit_filters(model, [(0, 4)], mask, 0.1,
                             np.random.default_rng(99))
    degenerate_logged = records[0].degenerate and bool(records[0].note)

    ok = worst <= 1e-8 and degenerate_logged
    _report(3, ok, f"reinit orthogonality: 100 configs, max |dot| "
                   f"{worst:.2e}; degenerate fallback logged: "
                   f"{degenerate_logged}")


# --- criterion 4: mask semantics ------------------------------------------

def test_c04_mask_semantics():
    rng = np.random.default_rng(4)
    forward_exact = True
    for trial in range(10):
        model = small_model(depth=3, width=4, size=6, classes=5,
                            batch_norm=bool(trial % 2), seed=trial)
        mask = PruneMask.full(model)
        for row in mask.rows:
            dead = rng.random(len(row)) < 0.4
            dead[int(rng.integers(len(row)))] = False
            row[dead] = False
        x, _ = random_batch(model, n=4, seed=trial)
        zeroed = materialize_mask(model, mask)
        full = PruneMask.full(zeroed)
        for mode in ("train", "eval"):
            a, _ = forward(model, mask, x, mode=mode)
            b, _ = forward(zeroed, full, x, mode=mode)
            forward_exact = forward_exact and np.array_equal(a, b)

    frozen = True
    for rule in ("sgd", "momentum", "adam"):
        model = small_model(depth=2, width=4, size=5, batch_norm=True,
                            seed=7)
        params = model.parameters()
        state = OptimizerState(rule, params, {"momentum": 0.9})
        mask = PruneMask.full(model)
        dead = [(0, 1), (1, 0), (1, 3)]
        for l, f in dead:
            mask.rows[l][f] = False

        def masked_bytes():
            chunks = []
            for l, f in dead:
                chunks.append(params[f"conv{l}.w"][f].tobytes())
                chunks.append(params[f"conv{l}.b"][f:f + 1].tobytes())
                for slot in state.slots[f"conv{l}.w"].values():
                    chunks.append(slot[f].tobytes())
            return b"".join(chunks)

        before = masked_bytes()
        x, y = random_batch(model, n=6, seed=8)
        for _ in range(100):
            _, cache = forward(model, mask, x, mode="train")
            _, grads = backward(model, mask, cache, y)
            step(state, params, grads, mask, 0.01)
        frozen = frozen and masked_bytes() == before

    ok = forward_exact and frozen
    _report(4, ok, f"mask semantics: forward zeroed-model equality "
                   f"{forward_exact}, masked params+slots frozen over "
                   f"100 steps x 3 rules {frozen}")


# --- criteria 5-8 share the benchmark fixture -----------------------------

ARMS = {"standard": {"n": "0"},
        "ortho": {},
        "random": {"metric": "random"}}
SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    t0 = time.time()
    base = tmp_path_factory.mktemp("benchmark")
    summaries = {}
    events = None
    ckpt_path = None
    ckpt_cfg = None
    dataset = None
    for arm, extra in ARMS.items():
        for seed in SEEDS:
            cfg = parse_config(overrides={"seed": str(seed),
                                          "checkpoint_every": "0", **extra})
            if dataset is None:
                dataset = load_dataset(cfg)
            run_dir = None
            if arm == "standard" and seed == 0:
                run_dir = str(base / "standard-0")
            res = do_train(cfg, run_dir=run_dir, dataset=dataset)
            summaries[arm, seed] = summarize(res.log)
            if arm == "ortho" and seed == 0:
                events = list(res.cycle.events)
            if run_dir:
                ckpt_path = os.path.join(run_dir, "final.ckpt")
                ckpt_cfg = cfg
            s = summaries[arm, seed]
            print(f"    [benchmark] {arm:>8s} seed {seed}: "
                  f"test {s['final_test_acc']:.4f} "
                  f"gap {s['gap_last5']:+.4f} "
                  f"ortho {s['final_ortho_sum']:.3f} "
                  f"({time.time() - t0:.0f}s elapsed)",
                  file=sys.__stdout__, flush=True)
    return {"summaries": summaries, "events": events, "ckpt": ckpt_path,
            "cfg": ckpt_cfg, "elapsed": time.time() - t0}


def test_c05_schedule_shape(benchmark):
    boundaries = sorted(e for e, msg in benchmark["events"]
                        if msg.startswith("phase") and e > 0)
    shape_ok = boundaries == [20, 30, 50, 60, 80, 90]

    # n=0 must be byte-identical to a scheduler-free training loop
    cfg = parse_config(overrides={
        "n": "0", "epochs": "5", "width": "4", "depth": "2",
        "train_size": "400", "probe_size": "80", "test_size": "120",
        "synth_size": "6", "batch_size": "50", "checkpoint_every": "0",
    })
    ds = load_dataset(cfg)
    res = do_train(cfg, dataset=ds)

    init_rng, streams = RngStreams.from_seed(cfg.seed)
    model = init_model(cfg.depth, cfg.width, ds.images.shape[1:],
                       num_classes=cfg.num_classes, kernel=cfg.kernel,
                       batch_norm=cfg.batch_norm, dropout=cfg.dropout,
                       rng=init_rng)
    opt = OptimizerState(cfg.optimizer, model.parameters(),
                         optimizer_hyper(cfg))
    ref_log = plain_training_loop(model, opt, ds, cfg.lr_schedule(),
                                  cfg.epochs, cfg.batch_size, cfg.seed,
                                  streams.dropout,
                                  ortho_lambda=cfg.ortho_loss_lambda)
    same_csv = res.log.to_csv() == ref_log.to_csv()
    same_params = all(
        np.array_equal(a, b) for a, b in
        zip(res.model.parameters().values(), model.parameters().values()))

    ok = shape_ok and same_csv and same_params
    _report(5, ok, f"schedule shape: boundaries {boundaries}; n=0 "
                   f"byte-identical to plain loop (csv {same_csv}, "
                   f"params {same_params})")


def test_c06_directional_benefit(benchmark):
    s = benchmark["summaries"]
    mean = {arm: float(np.mean([s[arm, sd]["final_test_acc"]
                                for sd in SEEDS])) for arm in ARMS}
    signs = sum(s["ortho", sd]["final_test_acc"]
                > s["standard", sd]["final_test_acc"] for sd in SEEDS)
    ordered = mean["ortho"] > mean["random"] > mean["standard"]
    in_budget = benchmark["elapsed"] < 45 * 60
    ok = ordered and signs >= 4 and in_budget
    _report(6, ok, f"directional benefit: mean test acc ortho "
                   f"{mean['ortho']:.4f} > random {mean['random']:.4f} "
                   f"> standard {mean['standard']:.4f}: {ordered}; "
                   f"sign test {signs}/5; "
                   f"{benchmark['elapsed'] / 60:.1f} min")


def test_c07_ortho_sum_trajectory(benchmark):
    s = benchmark["summaries"]
    wins = sum(s["ortho", sd]["final_ortho_sum"]
               < s["standard", sd]["final_ortho_sum"] for sd in SEEDS)
    ok = wins >= 4
    _report(7, ok, f"end-of-run filter overlap lower than standard in "
                   f"{wins}/5 seeds")


def test_c08_generalization_gap(benchmark):
    s = benchmark["summaries"]
    wins = sum(s["ortho", sd]["gap_last5"]
               < s["standard", sd]["gap_last5"] for sd in SEEDS)
    ok = wins >= 4
    _report(8, ok, f"last-5-epoch train-test gap smaller than standard "
                   f"in {wins}/5 seeds")


# --- criterion 9: statistics machinery ------------------------------------

def test_c09_statistics_machinery(benchmark):
    rng = np.random.default_rng(9)
    worst = 0.0
    for n in range(2, 21):
        for trial in range(3):
            x = rng.integers(0, max(2, n // 2), size=n).astype(float)
            y = x + rng.integers(-1, 2, size=n)      # heavy ties
            if np.ptp(x) == 0 or np.ptp(y) == 0:
                continue
            worst = max(worst, abs(pearson(x, y) - brute_pearson(x, y)),
                        abs(spearman(x, y) - brute_spearman(x, y)))
    stats_ok = worst < 1e-12

    report = do_analyze(benchmark["cfg"], benchmark["ckpt"], out_dir=None)
    pe, sp = report["agreement"]["ortho"]
    pipeline_ok = (len(report["agreement"]) == 8
                   and all(np.isfinite(v) and -1 <= v <= 1
                           for pair in report["agreement"].values()
                           for v in pair))
    ok = stats_ok and pipeline_ok
    _report(9, ok, f"statistics: correlations vs brute force worst "
                   f"{worst:.1e}; trained-checkpoint ortho-vs-oracle "
                   f"pearson {pe:+.3f} spearman {sp:+.3f} "
                   f"(paper context 0.38 / 0.58)")


# --- criterion 10: determinism and persistence -----------------------------

def test_c10_determinism_and_resume(tmp_path):
    over = {"epochs": "8", "s1": "2", "s2": "1", "n": "2", "width": "4",
            "train_size": "600", "probe_size": "120", "test_size": "200",
            "synth_size": "6", "batch_size": "50", "seed": "5"}
    cfg_a = parse_config(overrides={**over, "checkpoint_every": "0"})
    csv_a = do_train(cfg_a, run_dir=None).log.to_csv()
    csv_b = do_train(parse_config(overrides={**over, "checkpoint_every": "0"}),
                     run_dir=None).log.to_csv()
    identical = csv_a == csv_b

    cfg_c = parse_config(overrides={**over, "checkpoint_every": "3",
                                    "out_dir": str(tmp_path)})
    full = do_train(cfg_c, run_dir=str(tmp_path / "unbroken"))
    resumed = resume_train(str(tmp_path / "unbroken" / "epoch3.ckpt"),
                           run_dir=str(tmp_path / "resumed"))
    resume_exact = resumed.log.to_csv() == full.log.to_csv()

    ok = identical and resume_exact
    _report(10, ok, f"determinism: same config+seed byte-identical "
                    f"{identical}; resume reproduces remaining rows "
                    f"{resume_exact}")
