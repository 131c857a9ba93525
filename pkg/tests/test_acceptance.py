"""Acceptance criteria for the full system.

One test per criterion; each prints a `[ACCEPTANCE] PASS/FAIL` line
(visible with `pytest -s`). Budgets and tolerances are asserted inline.
Run: pytest tests/test_acceptance.py -v -s
"""

import functools
import math
import time

import numpy as np
import pytest

from primid.align import LandmarkSet, LandmarkTemplate, solve_similarity
from primid.cli import main as cli_main
from primid.evaluation import (
    IMPOSTOR_COUNT_NOTE,
    METRIC_KEYS,
    ScoreSet,
    aggregate_report,
    closed_set_rank1,
    open_set_dir,
    tar_at_far,
    template_size_sweep,
    verification_scores,
)
from primid.model import (
    PrimNetConfig,
    TrainConfig,
    build_primnet,
    count_params,
    forward_embed,
    load_weights,
    save_weights,
    train,
)
from primid.nnet import (
    ChannelShuffle,
    Conv2d,
    L2Normalize,
    Linear,
    LossConfig,
    PReLU,
    am_softmax_loss,
    channel_shuffle,
    conv2d_grouped,
    init_class_weights,
    l2_normalize,
)
from primid.toydata import aligned_texture_dataset

from helpers import random_unit_rows
from oracles import (
    dir_at_far_exhaustive,
    finite_difference,
    max_relative_error,
    naive_conv2d,
    rank1_exhaustive,
    shuffle_permutation,
    spearman_correlation,
    tar_at_far_scan,
)

PARAM_BAND = (972_000, 1_012_000)
TOY_TRAIN = TrainConfig(lr=0.01, epochs=30, batch_size=64, seed=0)


def criterion(label):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[ACCEPTANCE] FAIL  {label}")
                raise
            print(f"\n[ACCEPTANCE] PASS  {label}")
        return wrapper
    return deco


@pytest.fixture(scope="module")
def toy_trained(tmp_path_factory):
    """PrimNet trained from scratch on the 10x40 texture dataset.

    Half of each class's images train the network; the other half form the
    held-out evaluation split. The elapsed training time feeds the 5-minute
    budget assertion.
    """
    crops, labels = aligned_texture_dataset(10, 40, seed=0)
    train_idx = np.arange(0, len(labels), 2)
    test_idx = np.arange(1, len(labels), 2)
    model = build_primnet(PrimNetConfig(train=TOY_TRAIN))
    start = time.perf_counter()
    result = train(model, (crops[train_idx], labels[train_idx]), TOY_TRAIN)
    elapsed = time.perf_counter() - start
    test_set = {}
    embeddings = model.embed(crops[test_idx])
    held_labels = labels[test_idx]
    for c in range(10):
        test_set[f"ind{c:03d}"] = embeddings[held_labels == c]
    model_path = tmp_path_factory.mktemp("acc_model") / "toy.prim"
    save_weights(model, model_path)
    return {"model": model, "model_path": model_path, "loss_curve": result.loss_curve,
            "train_seconds": elapsed, "held_out": test_set}


class TestAcceptance:
    @criterion("parameter budget: 9.92e5 +/- 2% and file <= 4.2 MB")
    def test_01_parameter_budget(self, tmp_path):
        model = build_primnet()
        n = count_params(model)
        assert PARAM_BAND[0] <= n <= PARAM_BAND[1], n
        path = tmp_path / "default.prim"
        save_weights(model, path)
        size = path.stat().st_size
        assert size <= 4.2 * 1024 * 1024, size
        print(f"  params={n} file={size / 1024 / 1024:.2f} MB", end="")

    @criterion("alignment oracle: 1000 random transforms recovered at 1e-6")
    def test_02_alignment_oracle(self):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        solved = 0
        while solved < 1000:
            src = rng.uniform(-100, 100, (3, 2))
            d01 = src[1] - src[0]
            d02 = src[2] - src[0]
            if abs(d01[0] * d02[1] - d01[1] * d02[0]) < 100:
                continue
            s = rng.uniform(0.5, 2.0)
            theta = rng.uniform(-math.pi, math.pi)
            mx, my = rng.uniform(-50, 50, 2)
            a, b = s * math.cos(theta), s * math.sin(theta)
            dst = np.stack([a * src[:, 0] - b * src[:, 1] + mx,
                            b * src[:, 0] + a * src[:, 1] + my], axis=1)
            centroid = dst.mean(axis=0)
            tpl = LandmarkTemplate(
                t=np.concatenate([dst[:, 0] - centroid[0], dst[:, 1] - centroid[1]]),
                canvas=(100_000, 100_000), anchor_scale=1.0,
                anchor_offset=(float(centroid[0]), float(centroid[1])))
            lm = LandmarkSet(left_eye=tuple(src[0]), right_eye=tuple(src[1]),
                             mouth=tuple(src[2]))
            p = solve_similarity(lm, tpl)
            assert p.s == pytest.approx(s, rel=1e-6)
            assert p.a == pytest.approx(a, rel=1e-6, abs=1e-9)
            assert p.b == pytest.approx(b, rel=1e-6, abs=1e-9)
            assert p.m_x == pytest.approx(mx, rel=1e-6, abs=1e-6)
            assert p.m_y == pytest.approx(my, rel=1e-6, abs=1e-6)
            # residual orthogonality A^T r = 0
            a_mat = np.zeros((6, 4))
            b_vec = np.zeros(6)
            for j in range(3):
                x, y = src[j]
                a_mat[2 * j] = [x, -y, 1, 0]
                a_mat[2 * j + 1] = [y, x, 0, 1]
                b_vec[2 * j], b_vec[2 * j + 1] = dst[j]
            r = a_mat @ np.array([p.a, p.b, p.m_x, p.m_y]) - b_vec
            assert np.max(np.abs(a_mat.T @ r)) < 1e-6
            solved += 1
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, elapsed
        print(f"  {solved} transforms in {elapsed:.2f}s", end="")

    @criterion("neural-engine oracles: conv/shuffle/gradients")
    def test_03_neural_engine_oracles(self):
        start = time.perf_counter()
        rng = np.random.default_rng(31)

        # grouped conv vs naive direct convolution + group-slice decomposition
        for _ in range(200):
            groups = int(rng.choice([1, 2, 4]))
            cin = groups * int(rng.integers(1, 3))
            cout = groups * int(rng.integers(1, 3))
            k = int(rng.choice([1, 3]))
            stride = int(rng.choice([1, 2]))
            pad = int(rng.choice([0, 1]))
            h = int(rng.integers(k, k + 4))
            w = int(rng.integers(k, k + 4))
            x = rng.standard_normal((2, cin, h, w))
            conv = Conv2d(cin, cout, kernel=k, stride=stride, padding=pad,
                          groups=groups, rng=rng, dtype=np.float64)
            conv.bias.data = rng.standard_normal(cout)
            fast = conv2d_grouped(x, conv)
            slow = naive_conv2d(x, conv.weight.data, conv.bias.data, stride, pad, groups)
            assert np.max(np.abs(fast - slow)) < 1e-5
            cg, og = cin // groups, cout // groups
            for gi in range(groups):
                sub = Conv2d(cg, og, kernel=k, stride=stride, padding=pad,
                             groups=1, dtype=np.float64)
                sub.weight.data = conv.weight.data[gi * og:(gi + 1) * og]
                sub.bias.data = conv.bias.data[gi * og:(gi + 1) * og]
                part = conv2d_grouped(x[:, gi * cg:(gi + 1) * cg], sub)
                assert np.max(np.abs(fast[:, gi * og:(gi + 1) * og] - part)) < 1e-5

        # channel shuffle: permutation table and inversion
        for c, g in [(6, 2), (8, 4), (12, 3), (16, 8), (10, 5)]:
            x = rng.standard_normal((2, c, 3, 2))
            out = channel_shuffle(x, g)
            np.testing.assert_array_equal(out, x[:, shuffle_permutation(c, g)])
            np.testing.assert_array_equal(channel_shuffle(out, c // g), x)

        # layer gradients vs 64-bit central finite differences
        def fd_layer(layer, x, params):
            ref = rng.standard_normal(layer.forward(x, cache=False).shape)
            layer.forward(x, cache=True)
            dx = layer.backward(ref.copy())
            assert max_relative_error(
                dx, finite_difference(
                    lambda xv: float(np.sum(layer.forward(xv, cache=False) * ref)),
                    x.copy())) < 1e-4
            for p in params:
                def obj(pv, p=p):
                    old = p.data
                    p.data = pv
                    try:
                        return float(np.sum(layer.forward(x, cache=False) * ref))
                    finally:
                        p.data = old
                layer.forward(x, cache=True)
                layer.backward(ref.copy())
                assert max_relative_error(
                    p.grad, finite_difference(obj, p.data.copy())) < 1e-4

        conv = Conv2d(4, 6, kernel=3, stride=2, padding=1, groups=2,
                      rng=rng, dtype=np.float64)
        fd_layer(conv, rng.standard_normal((2, 4, 6, 5)), conv.params())
        prelu_layer = PReLU(3, dtype=np.float64)
        fd_layer(prelu_layer, rng.standard_normal((2, 3, 4, 4)), prelu_layer.params())
        linear = Linear(5, 4, rng=rng, dtype=np.float64)
        fd_layer(linear, rng.standard_normal((3, 5)), linear.params())
        fd_layer(L2Normalize(), rng.standard_normal((3, 5)) + 0.4, [])
        shuffle_layer = ChannelShuffle(2)
        fd_layer(shuffle_layer, rng.standard_normal((2, 4, 3, 3)), [])

        # AM-softmax gradients (embeddings and class weights)
        emb = l2_normalize(rng.standard_normal((5, 6)))
        w = init_class_weights(4, 6, rng, dtype=np.float64)
        labels = rng.integers(0, 4, 5)
        cfg = LossConfig(scale=30.0, margin=0.35, class_weights=w)
        _, grads = am_softmax_loss(emb, labels, cfg)
        assert max_relative_error(
            grads.embeddings,
            finite_difference(lambda e: am_softmax_loss(e, labels, cfg)[0],
                              emb.copy())) < 1e-4
        assert max_relative_error(
            grads.class_weights,
            finite_difference(
                lambda wv: am_softmax_loss(emb, labels,
                                           LossConfig(30.0, 0.35, wv))[0],
                w.copy())) < 1e-4

        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, elapsed
        print(f"  200 conv shapes + gradients in {elapsed:.1f}s", end="")

    @criterion("metric oracles: tar/rank1/dir equal brute force on 100 instances")
    def test_04_metric_oracles(self):
        start = time.perf_counter()
        rng = np.random.default_rng(41)

        for i in range(100):
            n_g = int(rng.integers(5, 100))
            n_i = int(rng.integers(110, 900))
            if i % 4 == 0:
                values = rng.choice(np.linspace(-1, 1, 9), size=n_g + n_i)
            else:
                values = rng.uniform(-1, 1, n_g + n_i)
            genuine = list(values[:n_g])
            impostor = list(values[n_g:])
            scores = ScoreSet(genuine=genuine, impostor=impostor)
            got_tar, got_thr = tar_at_far(scores, 0.01)
            want_tar, want_thr = tar_at_far_scan(genuine, impostor, 0.01)
            assert got_tar == want_tar and got_thr == want_thr

        # TAR monotonicity needs >= 1000 impostors for the 0.1% target
        for _ in range(100):
            scores = ScoreSet(genuine=list(rng.uniform(-1, 1, 50)),
                              impostor=list(rng.uniform(-1, 1, 1000)))
            tar1, _ = tar_at_far(scores, 0.01)
            tar01, _ = tar_at_far(scores, 0.001)
            assert tar1 >= tar01

        for i in range(100):
            n_inds = int(rng.integers(3, 7))
            per = int(rng.integers(2, 5))
            dim = 8
            test_set = {
                f"ind{j:02d}": random_unit_rows(per, dim, seed=1000 * i + j)
                for j in range(n_inds)
            }
            trials = 3
            got = closed_set_rank1(test_set, trials=trials, seed=i)
            accs = []
            for trial in range(trials):
                trng = np.random.default_rng([i, trial])
                picks = {ind: int(trng.integers(test_set[ind].shape[0]))
                         for ind in sorted(test_set)}
                gallery = {ind: [e for q, e in enumerate(test_set[ind])
                                 if q != picks[ind]] for ind in test_set}
                probes = [test_set[ind][picks[ind]] for ind in sorted(test_set)]
                accs.append(rank1_exhaustive(probes, sorted(test_set), gallery))
            assert got == pytest.approx(float(np.mean(accs)), abs=1e-12)

            distractors = random_unit_rows(120, dim, seed=5000 + i)
            got_dir = open_set_dir(test_set, distractors, far_target=0.01,
                                   trials=trials, seed=i)
            rates = []
            for trial in range(trials):
                trng = np.random.default_rng([i, trial])
                picks = {ind: int(trng.integers(test_set[ind].shape[0]))
                         for ind in sorted(test_set)}
                gallery = {ind: [e for q, e in enumerate(test_set[ind])
                                 if q != picks[ind]] for ind in test_set}
                probes = [test_set[ind][picks[ind]] for ind in sorted(test_set)]
                rate, _ = dir_at_far_exhaustive(probes, sorted(test_set),
                                                distractors, gallery, 0.01)
                rates.append(rate)
            assert got_dir == pytest.approx(float(np.mean(rates)), abs=1e-12)

        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, elapsed
        print(f"  3x100 instances in {elapsed:.1f}s", end="")

    @criterion("toy training: >= 95% rank-1 and >= 90% TAR@1%FAR in < 5 min")
    def test_05_toy_training(self, toy_trained):
        assert toy_trained["train_seconds"] < 300.0, toy_trained["train_seconds"]
        curve = toy_trained["loss_curve"]
        assert all(np.isfinite(v) for v in curve)
        assert curve[-1] < 0.1 * curve[0]
        test_set = toy_trained["held_out"]
        rank1 = closed_set_rank1(test_set, trials=100, seed=0)
        scores = verification_scores(test_set)
        tar, _ = tar_at_far(scores, 0.01)
        assert rank1 >= 0.95, rank1
        assert tar >= 0.90, tar
        print(f"  train={toy_trained['train_seconds']:.0f}s rank1={rank1:.3f} "
              f"tar={tar:.3f}", end="")

    @criterion("template-size sweep: Spearman(size, TAR) > 0.5")
    def test_06_template_size_sweep(self, toy_trained):
        start = time.perf_counter()
        crops, labels = aligned_texture_dataset(10, 12, seed=777)
        embeddings = toy_trained["model"].embed(crops)
        unseen = {f"new{c:03d}": embeddings[labels == c] for c in range(10)}
        results = template_size_sweep(unseen, sizes=list(range(1, 12)), seed=0)
        rho = spearman_correlation([r[0] for r in results], [r[1] for r in results])
        elapsed = time.perf_counter() - start
        assert rho > 0.5, (rho, results)
        assert elapsed < 120.0, elapsed
        print(f"  spearman={rho:.3f} over sizes 1..11 in {elapsed:.0f}s", end="")

    @criterion("protocol counts: 625 genuine / 15000 impostor, noted in report")
    def test_07_protocol_counts(self):
        test_set = {f"ind{c:03d}": random_unit_rows(25, 8, seed=c) for c in range(25)}
        scores = verification_scores(test_set)
        assert len(scores.genuine) == 625
        assert len(scores.impostor) == 625 * 24
        report = aggregate_report(
            [{k: 50.0 for k in METRIC_KEYS} for _ in range(5)])
        assert IMPOSTOR_COUNT_NOTE in report.notes
        assert "note:" in report.to_text()

    @criterion("inference latency: single-crop embedding < 100 ms")
    def test_08_inference_latency(self):
        model = build_primnet()
        crop = np.random.default_rng(0).integers(0, 256, (112, 96, 3), dtype=np.uint8)
        forward_embed(model, crop)  # warm up caches/BLAS
        times = []
        for _ in range(10):
            t0 = time.perf_counter()
            forward_embed(model, crop)
            times.append(time.perf_counter() - t0)
        median = sorted(times)[len(times) // 2]
        assert median < 0.100, times
        print(f"  median {median * 1000:.1f} ms", end="")

    @criterion("determinism: repeated cmd_eval runs are byte-identical")
    def test_09_cmd_eval_determinism(self, toy_trained, eval_workspace,
                                     template_file, tmp_path):
        outs = []
        for run_dir in ("r1", "r2"):
            out = tmp_path / run_dir
            code = cli_main([
                "eval", "--manifest", str(eval_workspace["manifest"]),
                "--model", str(toy_trained["model_path"]),
                "--template", str(template_file),
                "--out", str(out), "--folds", "2", "--trials", "25",
                "--seed", "11", "--sweep", "--scores-csv"])
            assert code == 0
            outs.append(out)
        for name in ("report.json", "report.txt", "scores.csv", "sweep.csv"):
            b1 = (outs[0] / name).read_bytes()
            b2 = (outs[1] / name).read_bytes()
            assert b1 == b2, f"{name} differs between runs"
        report = (outs[0] / "report.json").read_text()
        for key in METRIC_KEYS:
            assert key in report
