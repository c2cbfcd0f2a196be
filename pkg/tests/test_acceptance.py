"""Acceptance criteria. Each test appends one PASS/FAIL/SKIP line that is
printed in the "acceptance criteria" section of the pytest summary."""

import contextlib
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import ACCEPTANCE_LINES, OVERFIT_CONFIG, corpus_path
from hmd_fer import cli
from hmd_fer.checkpoint import ModelCheckpoint, dumps, loads
from hmd_fer.dataset import (EmotionLabel as E, FrameRecord, LabeledExample,
                             SelfReport, by_split, class_histogram, parse_fer_csv,
                             parse_frames_csv, parse_self_report, to_arrays, write_fer_csv,
                             write_frames_csv, write_self_report)
from hmd_fer.nn import gradcheck as gc
from hmd_fer.nn import ops
from hmd_fer.occlusion import apply_mask, default_band_mask
from hmd_fer.session import compare_with_report, predict_session, summarize
from hmd_fer.synthetic import synthetic_corpus, synthetic_fer_corpus
from hmd_fer.training import (Classifier, TrainConfig, confusion_matrix, evaluate,
                              preprocess, report_from_confusion, train)

THOUSAND = settings(max_examples=1000, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])


@contextlib.contextmanager
def criterion(number, title):
    notes = []
    try:
        yield notes
    except pytest.skip.Exception as exc:
        ACCEPTANCE_LINES.append(f"SKIP  C{number} {title}: {exc}")
        raise
    except BaseException:
        ACCEPTANCE_LINES.append(f"FAIL  C{number} {title}" + (f" ({'; '.join(notes)})" if notes else ""))
        raise
    line = f"PASS  C{number} {title}" + (f" ({'; '.join(notes)})" if notes else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


# --------------------------------------------------------------------------
# 1. gradient oracle suite
# --------------------------------------------------------------------------

def test_c1_gradient_oracle_suite():
    with criterion(1, "gradient oracle suite") as notes:
        t0 = time.perf_counter()
        reports = gc.run_suite(instances=50, seed=0)
        for r in reports:
            print(r)
        worst = {r.name: r.max_rel_error for r in reports}
        assert all(r.passed for r in reports), [str(r) for r in reports if not r.passed]
        tol = {r.name: r.tolerance for r in reports}
        assert tol["conv2d"] <= 1e-5 and tol["dense"] <= 1e-5 and tol["relu"] <= 1e-5
        assert tol["softmax_cross_entropy"] <= 1e-5
        assert tol["maxpool2"] <= 1e-4 and tol["batchnorm"] <= 1e-4

        rng = np.random.default_rng(99)
        flipped = [gc.check_conv(rng, flip=True) for _ in range(10)]
        assert not any(r.passed for r in flipped), "sign-flipped backward passed"
        elapsed = time.perf_counter() - t0
        notes.append(f"worst conv {worst['conv2d']:.1e}, bn {worst['batchnorm']:.1e}, "
                     f"network {worst['network']:.1e}; negative control fails; {elapsed:.0f}s")
        assert elapsed < 120


# --------------------------------------------------------------------------
# 2. overfit fixture
# --------------------------------------------------------------------------

def _mean_loss(ckpt, examples):
    clf = Classifier(ckpt)
    images, labels = to_arrays(examples)
    logits = clf.net.forward(preprocess(images, ckpt.norm_mean, ckpt.norm_std))
    return ops.softmax_cross_entropy(logits.astype(np.float64), labels)[0]


@pytest.mark.slow
def test_c2_overfit_fixture(overfit_run, overfit_examples):
    with criterion(2, "overfit fixture") as notes:
        ckpt, history, seconds = overfit_run
        assert len(overfit_examples) == 56
        assert class_histogram(overfit_examples).tolist() == [8] * 7
        assert OVERFIT_CONFIG.epochs <= 200 and OVERFIT_CONFIG.preset == "vgg-fer-mini"
        acc = evaluate(ckpt, overfit_examples).accuracy
        final_loss = history[-1].train_loss
        eval_loss = _mean_loss(ckpt, overfit_examples)
        notes.append(f"train acc {acc:.3f}, final epoch loss {final_loss:.4f}, "
                     f"selected-checkpoint loss {eval_loss:.4f}, {seconds:.0f}s")
        assert acc == 1.0
        assert final_loss < 0.05 and eval_loss < 0.05
        assert seconds < 300
        # regression guard: 10-epoch mean loss does not rise after epoch 20
        losses = np.array([h.train_loss for h in history[20:]])
        blocks = losses[:len(losses) // 10 * 10].reshape(-1, 10).mean(axis=1)
        assert np.all(np.diff(blocks) <= 0.05), blocks


# --------------------------------------------------------------------------
# 3. desk-scale learning signal (needs the real corpus)
# --------------------------------------------------------------------------

def _uniform_subset(xs, n, seed):
    idx = np.sort(np.random.default_rng(seed).permutation(len(xs))[:n])
    return [xs[i] for i in idx]


@pytest.mark.slow
@pytest.mark.corpus
def test_c3_desk_scale_learning_signal(tmp_path):
    with criterion(3, "desk-scale learning signal") as notes:
        if corpus_path() is None:
            pytest.skip("FER2013 corpus not available (set HMD_FER_DATA_DIR)")
        t0 = time.perf_counter()
        xs = parse_fer_csv(corpus_path())
        # FER2013 has too few disgust images for 500/100 per class, so the
        # subsets are uniform draws that keep the corpus class balance.
        tr = _uniform_subset(by_split(xs, "train"), 3500, seed=0)
        te = _uniform_subset(by_split(xs, "test"), 700, seed=1)
        cfg = TrainConfig(preset="vgg-fer-mini", epochs=30, batch_size=32, seed=0)
        plain, _ = train(cfg, tr, te)
        band = default_band_mask()
        mtr = [LabeledExample(apply_mask(e.image, band), e.label, e.split) for e in tr]
        mte = [LabeledExample(apply_mask(e.image, band), e.label, e.split) for e in te]
        masked, _ = train(cfg, mtr, mte)
        acc_u = evaluate(plain, te).accuracy
        acc_m = evaluate(masked, mte).accuracy
        elapsed = time.perf_counter() - t0
        notes.append(f"unmasked {acc_u:.3f}, masked {acc_m:.3f}, drop {acc_u - acc_m:+.3f}, "
                     f"{elapsed / 60:.1f} min")
        assert acc_u >= 0.35
        assert abs(acc_u - acc_m) <= 0.12
        assert elapsed < 30 * 60


# --------------------------------------------------------------------------
# 4. masking throughput and fidelity
# --------------------------------------------------------------------------

def test_c4_masking_throughput_and_fidelity(tmp_path):
    with criterion(4, "masking throughput and fidelity") as notes:
        src = corpus_path()
        kind = "FER2013"
        if src is None:
            kind = "synthetic stand-in"
            src = tmp_path / "fer2013.csv"
            write_fer_csv(synthetic_fer_corpus(seed=0), src)
        out = tmp_path / "masked.csv"
        t0 = time.perf_counter()
        assert cli.run_cli(["mask", "--in", str(src), "--out", str(out)]) == 0
        elapsed = time.perf_counter() - t0

        before, after = parse_fer_csv(src), parse_fer_csv(out)
        assert len(before) == len(after) == 35887
        band = default_band_mask()
        inside = band.boolean()
        sample = np.random.default_rng(0).choice(len(before), 1000, replace=False)
        for i in sample:
            a, b = before[i].image, after[i].image
            assert not b[inside].any()
            assert np.array_equal(b[~inside], a[~inside])
            assert np.array_equal(apply_mask(b, band), b)
            assert (before[i].label, before[i].split) == (after[i].label, after[i].split)
        notes.append(f"{kind}, 35,887 rows parsed+masked+written in {elapsed:.1f}s")
        assert elapsed < 60


# --------------------------------------------------------------------------
# 5. determinism
# --------------------------------------------------------------------------

def test_c5_cli_determinism(tmp_path):
    with criterion(5, "determinism") as notes:
        data = tmp_path / "fer2013.csv"
        write_fer_csv(synthetic_corpus(5, seed=40, split="train")
                      + synthetic_corpus(2, seed=41, split="val"), data)
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{run}.ferc"
            assert cli.run_cli(["train", "--data", str(data), "--preset", "vgg-fer-mini",
                                "--epochs", "2", "--batch-size", "16", "--seed", "7",
                                "--threads", "1", "--out", str(out)]) == 0
            outs.append((out.read_bytes(), (tmp_path / f"{run}.ferc.history.csv").read_bytes()))
        assert outs[0][0] == outs[1][0], "checkpoints differ"
        assert outs[0][1] == outs[1][1], "histories differ"
        notes.append(f"checkpoint {len(outs[0][0])} bytes identical, history identical")


# --------------------------------------------------------------------------
# 6. round-trips
# --------------------------------------------------------------------------

image_st = st.one_of(
    st.builds(lambda s: np.random.default_rng(s).integers(0, 256, (48, 48), dtype=np.uint8),
              st.integers(0, 2**32 - 1)),
    st.sampled_from([0, 255, 1, 254]).map(lambda v: np.full((48, 48), v, np.uint8)),
)


def test_c6_round_trips(overfit_run):
    with criterion(6, "round-trips") as notes:
        counts = dict.fromkeys(["fer", "frames", "report", "checkpoint"], 0)

        @THOUSAND
        @given(st.lists(st.builds(LabeledExample, image_st, st.integers(0, 6),
                                  st.sampled_from(["train", "val", "test"])), max_size=4))
        def fer(xs):
            counts["fer"] += 1
            data = write_fer_csv(xs)
            back = parse_fer_csv(data)
            assert back == xs and write_fer_csv(back) == data

        @st.composite
        def frames_st(draw):
            n = draw(st.integers(0, 4))
            idx = sorted(draw(st.sets(st.integers(0, 2**31), min_size=n, max_size=n)))
            ts = sorted(draw(st.lists(st.integers(0, 2**40), min_size=n, max_size=n)))
            out = []
            for i, t in zip(idx, ts):
                pred = draw(st.none() | st.tuples(st.integers(0, 6), st.integers(0, 10**4)))
                out.append(FrameRecord(i, t, draw(image_st),
                                       None if pred is None else (pred[0], pred[1] / 1e4)))
            return out

        @THOUSAND
        @given(frames_st())
        def frames(frs):
            counts["frames"] += 1
            data = write_frames_csv(frs)
            back = parse_frames_csv(data)
            assert back == frs and write_frames_csv(back) == data

        @THOUSAND
        @given(st.lists(st.integers(1, 5), min_size=7, max_size=7), st.text(max_size=8),
               st.text(max_size=8))
        def report(ratings, game, who):
            counts["report"] += 1
            rep = SelfReport({E(k): r for k, r in enumerate(ratings)}, game, who)
            back = parse_self_report(write_self_report(rep), game, who)
            assert back == rep

        base, _, _ = overfit_run
        names = list(base.params)
        special = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 1e-45, 3.4e38], np.float32)

        @THOUSAND
        @given(st.integers(0, 2**32 - 1), st.floats(allow_nan=False, allow_infinity=False),
               st.floats(1e-6, 1e6), st.integers(0, 2**31))
        def checkpoint(seed, mean, std, epoch):
            counts["checkpoint"] += 1
            rng = np.random.default_rng(seed)
            params = dict(base.params)
            for name in rng.choice(names, 3, replace=False):
                arr = rng.standard_normal(params[name].shape).astype(np.float32)
                flat = arr.reshape(-1)
                pos = rng.integers(0, flat.size, size=min(flat.size, len(special)))
                flat[pos] = special[:len(pos)]
                params[name] = arr
            ck = ModelCheckpoint(base.preset, params, mean, std, epoch)
            assert loads(dumps(ck)) == ck

        for fn in (fer, frames, report, checkpoint):
            fn()
        notes.append(", ".join(f"{k} {v} cases" for k, v in counts.items()))
        assert all(v >= 1000 for v in counts.values()), counts


# --------------------------------------------------------------------------
# 7. session end-to-end
# --------------------------------------------------------------------------

@pytest.mark.slow
def test_c7_session_end_to_end(overfit_run, tmp_path):
    from hmd_fer.checkpoint import save_checkpoint

    with criterion(7, "session end-to-end") as notes:
        ckpt, _, _ = overfit_run
        held = synthetic_corpus(15, seed=9, split="test")[:100]  # never trained on
        frames = [FrameRecord(i, i * 1000, ex.image) for i, ex in enumerate(held)]
        fpath, mpath = tmp_path / "session.csv", tmp_path / "m.ferc"
        write_frames_csv(frames, fpath)
        save_checkpoint(ckpt, mpath)
        rpath = tmp_path / "likert.csv"
        rpath.write_text("emotion,rating\nangry,1\ndisgust,1\nfear,3\nhappy,5\nsad,2\n"
                         "surprise,4\nneutral,4\n")
        out = tmp_path / "pred.csv"
        assert cli.run_cli(["analyze", "--checkpoint", str(mpath), "--frames", str(fpath),
                            "--report", str(rpath), "--out", str(out)]) == 0
        preds = parse_frames_csv(out)
        assert len(preds) == 100 and all(p.predicted is not None for p in preds)

        clf = Classifier(ckpt)
        tl = predict_session(clf, frames)
        for fr, k, c, row in zip(frames, tl.raw, tl.confidence, preds):
            p = clf.predict(fr.image)
            assert int(p.label) == k and p.confidence == c
            assert int(row.predicted[0]) == k and row.predicted[1] == round(c, 4)
        summary = summarize(tl)
        assert abs(summary.fractions.sum() - 1) <= 1e-9
        known = np.array([int(e.label) for e in held])

        worked = summarize(tl)
        worked.detected = frozenset({E.FEAR, E.NEUTRAL, E.SURPRISE})
        rep = SelfReport({E.ANGRY: 4, E.DISGUST: 1, E.FEAR: 5, E.HAPPY: 1, E.SAD: 1,
                          E.SURPRISE: 4, E.NEUTRAL: 3})
        ag = compare_with_report(worked, rep)
        assert ag.declared == {E.ANGRY, E.FEAR, E.SURPRISE, E.NEUTRAL}
        assert ag.precision == 1.0 and ag.recall == 0.75
        notes.append(f"100 frames, raw accuracy vs known labels {np.mean(tl.raw == known):.2f}, "
                     f"worked example P=1.0 R=0.75")


# --------------------------------------------------------------------------
# 8. metric consistency
# --------------------------------------------------------------------------

def test_c8_metric_consistency(quick_checkpoint, faces):
    with criterion(8, "metric consistency") as notes:
        rng = np.random.default_rng(8)
        clf = Classifier(quick_checkpoint)
        probs = clf.probabilities(np.stack([e.image for e in faces]))
        direct = evaluate(clf, faces)
        np.testing.assert_array_equal(direct.confusion, confusion_matrix(
            [int(e.label) for e in faces], probs.argmax(axis=1)))
        for trial in range(100):
            n = int(rng.integers(1, 400))
            if trial % 2:
                # subsets of a real model evaluation
                idx = rng.choice(len(faces), size=min(n, len(faces)), replace=False)
                y = np.array([int(faces[i].label) for i in idx])
                p = probs[idx].argmax(axis=1)
            else:
                y = rng.integers(0, 7, n)
                p = np.where(rng.random(n) < rng.random(), y, rng.integers(0, 7, n))
            rep = report_from_confusion(confusion_matrix(y, p))
            cm = rep.confusion
            assert rep.accuracy == np.trace(cm) / cm.sum()
            assert rep.accuracy == np.mean(y == p)
            np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(y, minlength=7))
            assert rep.count == len(y)
        notes.append("100 randomized prediction sets plus a full model evaluation")
