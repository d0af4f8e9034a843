"""The eight acceptance criteria, one test each, at their stated tolerances.

Every test reports a ``[PASS]``/``[FAIL]`` line through the ``acceptance``
fixture; the lines are repeated in the terminal summary.
"""

import json
import os
import subprocess
import sys
import time
from decimal import Decimal

import numpy as np

from cct import cli, metrics, plots
from cct import datasplit as ds
from cct import numerics as nx
from cct.errors import TokenizerGeometryError
from cct.metrics import ConfusionMatrix
from cct.model import CctConfig, classify_tokens, forward, init_params, plan_tokenizer, preset_config
from cct.model.checkpoint import load_checkpoint, save_checkpoint
from cct.synthetic import write_task
from cct.trainer import EpochRecord, TrainHistory
from gradcases import FD_ORDER, FD_STEP, KEY_BIAS, OP_CASES, TINY_CCT, tiny_cct_problem
from metriccases import (FOLD_ACCURACY_PCT, FOLD_PRECISION_PCT, oracle_auc, oracle_confusion, oracle_roc,
                         oracle_scalars, random_instance)
from splitcases import OFFICIAL_TEST_COUNTS, OFFICIAL_TRAIN_COUNTS, check_all_policies, random_inputs, official_datasets

SEEDS = range(100)
COORDS_PER_TENSOR = 12


# -- 1 -------------------------------------------------------------------------------

def _op_errors():
    worst = (0.0, None)
    for name, build in OP_CASES.items():
        for seed in SEEDS:
            f, x = build(seed)
            err = nx.finite_difference_check(f, x, FD_STEP, order=FD_ORDER)
            worst = max(worst, (err, f"{name}/seed {seed}"), key=lambda w: w[0])
    return worst


def _cct_errors():
    worst, zero_ok = (0.0, None), True
    for seed in SEEDS:
        params, loss = tiny_cct_problem(seed)
        for t in params.values():
            t.requires_grad, t.grad = True, None
        loss().backward()
        pick = np.random.default_rng(10_000 + seed)
        for name, t in params.items():
            idx = pick.choice(t.size, min(COORDS_PER_TENSOR, t.size), replace=False)
            numeric = nx.numerical_gradient(lambda _t: loss(), t, FD_STEP, indices=idx,
                                            order=FD_ORDER).reshape(-1)[idx]
            analytic = t.grad.reshape(-1)[idx]
            err = nx.relative_error(analytic, numeric)
            if name == KEY_BIAS[0]:
                # structurally zero gradient: both sides must sit at round-off
                zero = np.isin(idx, np.arange(t.size)[KEY_BIAS[1]])
                zero_ok &= bool(np.all(np.abs(analytic[zero]) < 1e-12) and np.all(np.abs(numeric[zero]) < 1e-12))
                err[zero] = 0.0
            worst = max(worst, (float(err.max()), f"{name}/seed {seed}"), key=lambda w: w[0])
    return worst, zero_ok


def test_criterion_1_gradient_suite(acceptance):
    assert TINY_CCT.image_size == (12, 12) and TINY_CCT.tokenizer_stages == 1
    assert (TINY_CCT.embed_dim, TINY_CCT.num_heads, TINY_CCT.encoder_depth) == (8, 2, 1)
    start = time.perf_counter()
    op_err, op_where = _op_errors()
    (cct_err, cct_where), zero_ok = _cct_errors()
    seconds = time.perf_counter() - start
    ok = op_err < 1e-5 and cct_err < 1e-4 and zero_ok and seconds < 120
    acceptance(1, "gradient suite", ok,
               f"{len(OP_CASES)} ops x {len(SEEDS)} seeds worst {op_err:.1e} at {op_where}; "
               f"tiny CCT x {len(SEEDS)} seeds worst {cct_err:.1e} at {cct_where}; {seconds:.0f}s")


# -- 2 -------------------------------------------------------------------------------

def test_criterion_2_metric_oracle(acceptance):
    rng = np.random.default_rng(20240601)
    mismatches, worst_auc = [], 0.0
    for i in range(1000):
        scores, labels = random_instance(rng)
        preds = rng.integers(0, 2, len(labels)).tolist()
        cm = metrics.confusion(preds, labels)
        if (cm.tp, cm.fp, cm.fn, cm.tn) != oracle_confusion(preds, labels):
            mismatches.append(f"{i}: confusion")
        got = {k: v for k, v in metrics.scalar_metrics(cm).scalars().items() if k != "auc_roc"}
        if got != oracle_scalars(cm.tp, cm.fp, cm.fn, cm.tn):
            mismatches.append(f"{i}: scalars")
        curve = metrics.roc_curve(scores, labels)
        if curve.points != oracle_roc(scores, labels):
            mismatches.append(f"{i}: roc")
        worst_auc = max(worst_auc, abs(metrics.auc(curve) - oracle_auc(scores, labels)))
    ok = not mismatches and worst_auc < 1e-12
    acceptance(2, "metric oracle", ok,
               f"1000 instances, {len(mismatches)} count mismatches, worst AUC gap {worst_auc:.1e}")


# -- 3 -------------------------------------------------------------------------------

def test_criterion_3_reported_arithmetic(acceptance):
    # reported official-split rates against the official test counts (200 per class)
    rates = {"accuracy": "99.00", "precision": "99.00", "recall": "99.00", "f1": "99.00",
              "fpr": "1.00", "fnr": "1.00", "tnr": "99.00"}
    positives, negatives = OFFICIAL_TEST_COUNTS
    fn = int(Decimal(rates["fnr"]) / 100 * positives)
    fp = int(Decimal(rates["fpr"]) / 100 * negatives)
    cm = ConfusionMatrix(positives - fn, fp, fn, negatives - fp)
    report = metrics.scalar_metrics(cm)
    rates_ok = (cm == ConfusionMatrix(198, 2, 2, 198)
                 and all(metrics.percent_str(getattr(report, k)) == v for k, v in rates.items()))

    means = (str(metrics.mean_percent(FOLD_ACCURACY_PCT)), str(metrics.mean_percent(FOLD_PRECISION_PCT)))
    folds_ok = means == ("99.22", "98.88")

    train, test = official_datasets()
    n = ds.policy3_move_count(sum(OFFICIAL_TRAIN_COUNTS), sum(OFFICIAL_TEST_COUNTS), 0.1)
    plan = ds.policy3(train, test, 0.1, seed=0)
    policy3_ok = n == 2407 and plan.sizes()["train"] == 28075 and plan.sizes()["test"] == 2807

    acceptance(3, "reported-figure arithmetic", rates_ok and folds_ok and policy3_ok,
               f"CM {cm.as_grid()} acc {metrics.percent_str(report.accuracy)}; fold means {means}; "
               f"policy3 n={n} train {plan.sizes()['train']} test {plan.sizes()['test']}")


# -- 4 -------------------------------------------------------------------------------

def test_criterion_4_geometry(acceptance):
    try:
        plan_tokenizer(preset_config("table5-literal"))
        literal = "accepted"
    except TokenizerGeometryError as exc:
        literal = f"rejected at stage {exc.stage}" if "stage 4" in str(exc) else "rejected elsewhere"
    three = plan_tokenizer(preset_config("table5-literal-3stage")).sequence_length
    compat = plan_tokenizer(preset_config("table5-compat")).sequence_length
    ok = literal == "rejected at stage 4" and (three, compat) == (9, 169)
    acceptance(4, "tokenizer geometry", ok,
               f"literal {literal}; 3-stage length {three}; compat length {compat}")


# -- 5 -------------------------------------------------------------------------------

def _cli(*argv, env=None):
    """Run the command line in a fresh single-threaded interpreter."""
    return subprocess.run([sys.executable, "-m", "cct.cli", *map(str, argv)], env=env,
                          capture_output=True, text=True)


def test_criterion_5_learning_smoke_test(acceptance, tmp_path):
    paths = write_task(tmp_path, seed=0)
    train_ds = ds.ingest(paths["train"])
    assert len(train_ds) == 64
    run_cfg = cli.load_run_config("tiny-test")
    assert run_cfg.model.image_size == (32, 32)
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "model": run_cfg.model.to_dict(), "train": run_cfg.train.to_dict(),
        "data": {"train_manifest": "train.csv", "test_manifest": "test.csv", "normalize": None}}))
    assert _cli("split", "--policy", "policy1", "--val-fraction", 0, "--train-manifest", paths["train"],
                "--test-manifest", paths["test"], "--out-dir", tmp_path).returncode == 0
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")

    runs = []
    for name in ("a", "b"):
        start = time.perf_counter()
        proc = _cli("train", "--config", config, "--plan", tmp_path / "policy1.json",
                    "--validate-on", "test", "--out", tmp_path / f"{name}.ckpt",
                    "--history", tmp_path / f"{name}.csv", env=env)
        runs.append(time.perf_counter() - start)
        assert proc.returncode == 0, proc.stderr
    history = TrainHistory.from_csv((tmp_path / "a.csv").read_text())
    first_perfect = next((r.epoch for r in history.records if r.train_acc == 1.0), None)

    proc = _cli("eval", "--checkpoint", tmp_path / "a.ckpt", "--plan", tmp_path / "policy1.json",
                "--config", config, "--report", tmp_path / "report.json", env=env)
    assert proc.returncode == 0, proc.stderr
    val_auc = json.loads((tmp_path / "report.json").read_text())["auc_roc"]
    identical = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    ok = (first_perfect is not None and first_perfect <= 200 and len(history) <= 200
          and val_auc >= 0.95 and max(runs) < 300 and identical)
    acceptance(5, "learning smoke test", ok,
               f"train acc 1.0 first at epoch {first_perfect}; validation AUC {val_auc:.4f}; "
               f"runs {runs[0]:.0f}s/{runs[1]:.0f}s; history CSV identical: {identical}")


# -- 6 -------------------------------------------------------------------------------

def test_criterion_6_split_properties(acceptance):
    rng = np.random.default_rng(6)
    problems = []
    for seed in range(1000):
        problems += check_all_policies(*random_inputs(rng), seed)
    acceptance(6, "split properties", not problems,
               f"1000 datasets x 3 policies, {len(problems)} violations"
               + (f", first: {problems[0]}" if problems else ""))


# -- 7 -------------------------------------------------------------------------------

def test_criterion_7_round_trips(acceptance, tmp_path):
    config = preset_config("tiny-test")
    params = init_params(config, nx.RngStream(7))
    rng = np.random.default_rng(7)
    for t in params.values():
        t.data = t.data + rng.normal(0.0, 0.3, t.shape)
    save_checkpoint(params, config, tmp_path / "m.ckpt")
    loaded, loaded_config = load_checkpoint(tmp_path / "m.ckpt")
    x = rng.random((4, 1, 32, 32))
    delta = float(np.abs(forward(x, loaded, loaded_config).data - forward(x, params, config).data).max())

    report = metrics.evaluate_scores(rng.random(40), np.arange(40) % 2, with_macro=True)
    doc = json.loads(json.dumps(report.to_dict(run=cli.run_manifest("eval", {}))))
    try:
        cli.validate_report(doc)
        schema_ok = True
    except Exception:
        schema_ok = False

    history = TrainHistory(run={"seed": 7})
    for epoch in (1, 2, 3):
        history.append(EpochRecord(epoch, 1.0 / epoch, 0.5 + 0.1 * epoch, 1.1 / epoch, 0.45 + 0.1 * epoch))

    def render():
        return (plots.accuracy_plot(history, {"seed": 7}), plots.loss_plot(history, {"seed": 7}),
                plots.roc_plot(report.roc, float(report.auc_roc)), plots.confusion_heatmap(report.confusion))
    svg_stable = render() == render()

    ok = delta < 1e-5 and loaded_config == config and schema_ok and svg_stable
    acceptance(7, "round trips", ok,
               f"checkpoint logit delta {delta:.1e}; report schema valid: {schema_ok}; "
               f"SVG byte-stable: {svg_stable}")


# -- 8 -------------------------------------------------------------------------------

def test_criterion_8_ablation_wiring(acceptance):
    base = {"image_size": [16, 16], "in_channels": 1, "tokenizer_stages": 2, "conv_kernel": 3,
            "pool_kernel": 3, "embed_dim": 8, "num_heads": 2, "encoder_depth": 2,
            "dropout_rate": 0.0, "attention_dropout_rate": 0.0}
    documents = {
        "ViT-Lite": {**base, "tokenizer": "patch", "patch_size": 4, "pooling": "class_token"},
        "CVT": {**base, "tokenizer": "patch", "patch_size": 4, "pooling": "seqpool"},
        "CCT": {**base, "tokenizer": "convolutional", "pooling": "seqpool"},
    }
    x = np.random.default_rng(8).random((2, 1, 16, 16))
    wired = {}
    for expected, doc in documents.items():
        cfg = CctConfig.from_dict(json.loads(json.dumps(doc)))
        out = forward(x, init_params(cfg, nx.RngStream(0)), cfg)
        wired[expected] = cfg.variant == expected and out.shape == (2, 2)

    cfg = CctConfig.from_dict({**documents["CCT"], "positional_embedding": "none"})
    gap = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = init_params(cfg, nx.RngStream(seed))
        for t in params.values():
            t.data = rng.normal(0.0, 0.5, t.shape)
        tokens = rng.normal(size=(2, 9, cfg.embed_dim))
        perm = rng.permutation(9)
        a = classify_tokens(nx.Tensor(tokens), params, cfg).data
        b = classify_tokens(nx.Tensor(tokens[:, perm]), params, cfg).data
        gap = max(gap, float(np.abs(a - b).max()))

    ok = all(wired.values()) and gap < 1e-12
    acceptance(8, "ablation wiring", ok,
               f"variants {', '.join(k for k, v in wired.items() if v)} selectable; "
               f"seqpool permutation gap {gap:.1e} over 20 seeds")
