"""Acceptance suite: one test per criterion, one PASS/FAIL line per criterion.

The lines are printed in the pytest terminal summary (and immediately when
running with ``-s`` or as a script). Training runs shared by several
criteria are cached for the module.
"""

import contextlib
import math
import os
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from dianet import ops
from dianet.analysis import HiddenStateTrace, integration_matrix
from dianet.backbone import Network, NetworkConfig, StageSpec, count_model_params
from dianet.cells import DiaLstmParams, DiaState, StandardLstmParams, count_params, dia_lstm_step, standard_lstm_step
from dianet.cli import main as cli_main
from dianet.data import load_cifar, parse_cifar, serialize_cifar
from dianet.errors import ConfigError
from dianet.forest import ForestParams, RegressionForest
from dianet.gradcheck import run_suite
from dianet.tensor import Tensor, no_grad
from dianet.train import TrainConfig, load_datasets, train

from oracles import dia_lstm_reference, planted_trace, standard_lstm_reference

RESULTS = {}
SEEDS = (0, 1, 2)
DESK_STAGES = [StageSpec(16, 2, 1), StageSpec(32, 2, 2), StageSpec(64, 2, 2)]


@contextlib.contextmanager
def criterion(n, title):
    t0 = time.perf_counter()
    detail = []
    try:
        yield detail
    except BaseException:
        RESULTS[n] = f"FAIL  {n:>2}. {title} ({time.perf_counter() - t0:.1f}s) {'; '.join(detail)}"
        print(RESULTS[n])
        raise
    RESULTS[n] = f"PASS  {n:>2}. {title} ({time.perf_counter() - t0:.1f}s) {'; '.join(detail)}"
    print(RESULTS[n])


def desk_net(attention="dia_lstm", bn=True, act="sigmoid"):
    return NetworkConfig(stages=DESK_STAGES, attention=attention, reduction=4, use_batch_norm=bn,
                         output_activation=act, num_classes=4)


def desk_train(seed, lr=0.1):
    # 1000/500 synthetic images, K=4, mid difficulty, 200 steps of batch 16
    return TrainConfig(batch_size=16, epochs=10, lr=lr, seed=seed, subset=1000, test_subset=500, num_classes=4,
                       difficulty="mid", max_steps=200, eval_interval=100)


@lru_cache(maxsize=None)
def _data(seed):
    return load_datasets(desk_train(seed))


@lru_cache(maxsize=None)
def desk_run(attention, seed, bn=True, act="sigmoid", lr=0.1):
    """Train once and keep the record plus every non-finite-loss flag."""
    res = train(desk_net(attention, bn, act), desk_train(seed, lr), data=_data(seed))
    return res.record


# 1 -------------------------------------------------------------------------------

def test_criterion_01_parameter_counts():
    with criterion(1, "parameter-count exactness") as d:
        checked = 0
        for n in (16, 32, 64, 128, 1024):
            for r in (1, 2, 4, 8, 16):
                if n % r:
                    continue
                assert count_params("standard_lstm", n) == 8 * n * n
                assert count_params("dia_lstm", n, r) == 10 * n * n // r
                if n <= 128:
                    live = DiaLstmParams(n, r, name="c1", seed=0)
                    assert sum(p.size for p in live.parameters() if p.ndim == 2) == 10 * n * n // r
                checked += 1
        assert sum(p.size for p in StandardLstmParams(64, name="c1").parameters() if p.ndim == 2) == 8 * 64 * 64
        assert count_params("standard_lstm", 1024) == 8_388_608 > 8_000_000
        d.append(f"{checked} (N, r) pairs; LSTM(1024) = 8,388,608")


# 2 -------------------------------------------------------------------------------

def test_criterion_02_constant_increment():
    with criterion(2, "constant DIA increment, linear SE increment") as d:
        def inc(kind, blocks):
            stages = [StageSpec(w, blocks, 1 if i == 0 else 2) for i, w in enumerate((16, 32, 64))]
            return count_model_params(NetworkConfig(stages=stages, attention=kind, reduction=4)).attention_total
        dia = [inc("dia_lstm", b) for b in (3, 9, 18)]
        se = [inc("se", b) for b in (3, 9, 18)]
        assert dia[0] == dia[1] == dia[2]
        assert se[1] / se[0] == 3.0 and se[2] / se[0] == 6.0
        d.append(f"DIA {dia[0]} for 3/9/18 blocks; SE {se}")


# 3 -------------------------------------------------------------------------------

def test_criterion_03_gradient_suite():
    with criterion(3, "finite-difference gradient suite") as d:
        worst = {}
        for scope in ("ops", "cell", "block", "network"):
            results = run_suite(scope)
            for r in results:
                assert r.passed, f"{scope}/{r.name}: {r.error:.2e} >= {r.tolerance:.0e}"
            worst[scope] = max(r.error for r in results)
        assert worst["ops"] < 1e-6 and worst["cell"] < 1e-6 and worst["block"] < 1e-6
        assert worst["network"] < 1e-4
        d.append(", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# 4 -------------------------------------------------------------------------------

def test_criterion_04_cell_oracles():
    with criterion(4, "cell steps match scalar references") as d:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for k in range(100):
            act = "sigmoid" if k % 2 == 0 else "tanh"
            dia = DiaLstmParams(8, 2, act, name="c4", seed=k)
            std = StandardLstmParams(8, name="c4s", seed=k)
            for p in dia.parameters() + std.parameters():
                p.data[...] = rng.normal(size=p.shape)
            y, h, c = rng.normal(size=8), rng.uniform(-1, 1, size=8), rng.normal(size=8)
            state = DiaState(Tensor(h[None]), Tensor(c[None]))
            hd, cd = dia_lstm_step(Tensor(y[None]), state, dia)
            rh, rc = dia_lstm_reference(y, h, c, dia.reduce_y.data, dia.reduce_h.data,
                                        [w.data for w in dia.w_y], [w.data for w in dia.w_h],
                                        [b.data for b in dia.bias], act)
            hs, cs = standard_lstm_step(Tensor(y[None]), state, std)
            sh, sc = standard_lstm_reference(y, h, c, [w.data for w in std.w_y], [w.data for w in std.w_h],
                                             [b.data for b in std.bias])
            errs = [np.abs(hd.data[0] - rh).max(), np.abs(cd.data[0] - rc).max(),
                    np.abs(hs.data[0] - sh).max(), np.abs(cs.data[0] - sc).max()]
            worst = max(worst, *errs)
        assert worst <= 1e-12
        d.append(f"100 instances, max abs diff {worst:.1e}")


# 5 -------------------------------------------------------------------------------

def test_criterion_05_attention_range():
    with criterion(5, "attention range over 200 training steps") as d:
        for act, lo, hi in (("sigmoid", 0.0, 1.0), ("tanh", -1.0, 1.0)):
            rec = desk_run("dia_lstm", 0, act=act)
            mins, maxs = rec.series("attention_min"), rec.series("attention_max")
            assert len(mins) == 200 and not rec.exploded
            assert lo < min(mins) and max(maxs) < hi, (act, min(mins), max(maxs))
            d.append(f"{act} h in [{min(mins):.3g}, {max(maxs):.3g}]")


# 6 -------------------------------------------------------------------------------

def test_criterion_06_resnet_equivalence():
    with criterion(6, "forced h = 1 equals attention=none bitwise") as d:
        x = _data(0)[0].images[:8]
        for dtype in (np.float32, np.float64):
            for training in (True, False):
                att = Network(desk_net("dia_lstm"), seed=5, dtype=dtype).train(training)
                plain = Network(desk_net("none"), seed=5, dtype=dtype).train(training)
                with no_grad():
                    a = att.forward(x.astype(dtype), force_attention=1.0)
                    b = plain.forward(x.astype(dtype))
                assert np.array_equal(a.logits.data, b.logits.data)
                for sa, sb in zip(a.stage_outputs, b.stage_outputs):
                    assert np.array_equal(sa.data, sb.data)
        d.append("float32/float64, train/eval")


# 7 -------------------------------------------------------------------------------

def test_criterion_07_planted_recovery():
    with criterion(7, "integration pipeline recovers planted sources") as d:
        planted = {3: 1, 5: 2}
        h = planted_trace(512, 8, 5, planted, seed=7)
        params = ForestParams(n_trees=100, seed=0)
        m = integration_matrix(HiddenStateTrace(h), params)
        for target, source in planted.items():
            row = m.scores[target - 1, :target - 1]
            assert row[source - 1] == 1.0
            others = np.delete(row, source - 1)
            assert np.all(others < 0.3), (target, row)
            d.append(f"h{target}<-h{source} others max {others.max():.3f}")
        X = np.concatenate([h[:, :, n] for n in range(4)], axis=1)
        forest = RegressionForest(params).fit(X, h[:, :, 4])
        total = forest.feature_importances_.sum()
        assert abs(total - 1.0) <= 1e-12
        d.append(f"importance sum - 1 = {total - 1:.1e}")


# 8 -------------------------------------------------------------------------------

def _cli_cfg(tmp_path, name, text):
    path = tmp_path / f"{name}.cfg"
    path.write_text(text)
    return str(path)


def test_criterion_08_no_bn_stability(tmp_path):
    with criterion(8, "no-BN stability and explosion reporting") as d:
        for seed in SEEDS:
            rec = desk_run("dia_lstm", seed, bn=False)
            losses = rec.series("loss")
            assert not rec.exploded and len(losses) == 200 and all(math.isfinite(v) for v in losses), seed
        d.append("DIA finite for 200 steps x 3 seeds")
        base = "widths = 16,32,64\nblocks = 2\nuse_bn = false\nsubset = 256\ntest_subset = 64\nmax_steps = 200\n"
        out = tmp_path / "fault"
        code = cli_main(["train", "--config", _cli_cfg(tmp_path, "f", base + "attention = dia_lstm\n"),
                         "--out", str(out), "--inject-fault", "5"])
        assert code == 3 and "explosion_block" in (out / "run.csv").read_text()
        out = tmp_path / "observed"
        code = cli_main(["train", "--config", _cli_cfg(tmp_path, "o", base + "attention = none\nlr = 1.0\n"),
                         "--out", str(out)])
        assert code == 3 and "explosion_block" in (out / "run.csv").read_text()
        d.append("fault-injected and plain lr=1.0 runs exit 3")
        # reported, not asserted
        for kind in ("none", "se"):
            rec = desk_run(kind, 0, bn=False)
            state = "exploded" if rec.exploded else f"finite, final loss {rec.series('loss')[-1]:.3f}"
            d.append(f"{kind} at lr 0.1: {state}")


# 9 -------------------------------------------------------------------------------

def test_criterion_09_learning_sanity():
    with criterion(9, "desk-scale learning sanity") as d:
        dia_train, dia_test, none_test = [], [], []
        for seed in SEEDS:
            dia = desk_run("dia_lstm", seed)
            none = desk_run("none", seed)
            dia_train.append(dia.series("accuracy", "train")[-1])
            dia_test.append(dia.series("accuracy", "test")[-1])
            none_test.append(none.series("accuracy", "test")[-1])
        d.append(f"DIA train {dia_train}, test {dia_test}; none test {none_test}")
        assert min(dia_train) >= 0.90
        assert np.mean(dia_test) >= np.mean(none_test) - 0.02


# 10 ------------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    with criterion(10, "bitwise determinism of checkpoint and CSVs") as d:
        cfg = _cli_cfg(tmp_path, "det", "widths = 8,16\nblocks = 2\nreduction_ratio = 2\nsubset = 128\n"
                       "test_subset = 64\nmax_steps = 16\naugment = true\nprecision = 64\n"
                       "analysis_samples = 64\nforest_trees = 10\nseed = 3\n")
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert cli_main(["train", "--config", cfg, "--out", str(out)]) == 0
            assert cli_main(["analyze", "--config", cfg, "--checkpoint", str(out / "model.dia"),
                             "--out", str(out)]) == 0
            outs.append({f: (out / f).read_bytes() for f in sorted(os.listdir(out))})
        assert outs[0].keys() == outs[1].keys() and len(outs[0]) == 6
        for f in outs[0]:
            assert outs[0][f] == outs[1][f], f
        d.append(f"{len(outs[0])} files identical")


# 11 ------------------------------------------------------------------------------

def test_criterion_11_cifar_parser(tmp_path):
    with criterion(11, "CIFAR parser round trip and truncation") as d:
        rng = np.random.default_rng(11)
        for variant, classes in (("c10", 10), ("c100", 100)):
            imgs = rng.integers(0, 256, size=(7, 3, 32, 32), dtype=np.uint8)
            labels = rng.integers(0, classes, size=7)
            buf = serialize_cifar(imgs, labels, variant, coarse=labels % 20 if variant == "c100" else None)
            x, y = parse_cifar(buf, variant)
            assert np.array_equal(x, imgs) and np.array_equal(y, labels)
            assert serialize_cifar(x, y, variant, coarse=labels % 20 if variant == "c100" else None) == buf
            path = tmp_path / f"{variant}.bin"
            path.write_bytes(buf[:-1])
            with pytest.raises(ConfigError):
                load_cifar(str(path), variant)
        d.append("c10 and c100 bit-exact; truncated files rejected")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
