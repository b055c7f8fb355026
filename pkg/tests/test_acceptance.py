"""Acceptance suite: one printed PASS/FAIL line per criterion, at the stated tolerances.

The two 2000-step runs dominate the runtime (about 25 minutes each on one
core).  Their checkpoints are cached in ``.runs/`` keyed by run config and a
digest of the training-path sources, so a rerun with unchanged code reuses
them.  Delete ``.runs/`` to force fresh training.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from emostrength import audio
from emostrength import evaluation as E
from emostrength import gradcheck
from emostrength.corpus import EMOTIONS, generate_corpus, generate_items, make_batch
from emostrength.experiment import FULL, TAC_ONLY, DeskRun, execute
from emostrength.inference import SWEEP_ALPHAS, StrengthRequest, transfer
from emostrength.losses import TERMS, gram, style_loss
from emostrength.tensor import Tensor
from emostrength.training import (
    EmotionalTTS, TrainConfig, batch_objective, checkpoint_bytes, load_checkpoint, save_checkpoint, train,
    with_overrides,
)

CACHE = Path(__file__).resolve().parents[1] / ".runs"
SEED = 0
N_TEXTS = 5


@pytest.fixture(scope="session")
def desk_runs():
    runs = {"full": DeskRun(SEED, 2000, disabled_terms=FULL), "tac_only": DeskRun(SEED, 2000, disabled_terms=TAC_ONLY)}
    return runs, {name: execute(run, CACHE)[0] for name, run in runs.items()}


@pytest.fixture(scope="session")
def sweeps(desk_runs):
    runs, states = desk_runs
    test = runs["full"].test_set()
    refs = E.pick_references(test, SEED)
    texts = [test[i].chars for i in np.random.default_rng(SEED).choice(len(test), N_TEXTS, replace=False)]
    sw, records = E.run_sweeps(states["full"].model, refs, texts, SWEEP_ALPHAS)
    return refs, texts, sw, records


# ---------------------------------------------------------------- 1

def test_c1_gradient_checks(verdict):
    start = time.perf_counter()
    results = gradcheck.run_all(n_points=10, base_seed=SEED)
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.worst)
    failed = [r.name for r in results if not r.passed]
    ok = not failed and elapsed < 120
    verdict("1 autodiff", ok, f"{len(results)} checks x 10 points, worst {worst.name} {worst.worst:.2e} "
            f"(< 1e-4), {elapsed:.1f}s (< 120s), failed={failed}")
    assert ok


# ---------------------------------------------------------------- 2

def test_c2_style_invariants(verdict):
    rng = np.random.default_rng(SEED)
    psd = True
    for _ in range(1000):
        t, c = rng.integers(1, 17, size=2)
        G = gram(Tensor(rng.normal(size=(t, c)))).data
        psd &= bool(np.array_equal(G, G.T) or np.abs(G - G.T).max() < 1e-12)
        psd &= bool(np.linalg.eigvalsh(G).min() >= -1e-9 * max(1.0, np.abs(G).max()))
    R, S = rng.normal(size=(9, 6)), rng.normal(size=(9, 6))
    self_zero = style_loss(Tensor(R), Tensor(R)).item() == 0.0
    base = style_loss(Tensor(R), Tensor(S)).item()
    perm_exact = all(style_loss(Tensor(R[p]), Tensor(S[q])).item() == base
                     for p, q in ((rng.permutation(9), rng.permutation(9)) for _ in range(20)))
    worked = style_loss(Tensor(np.array([[1.0, 0.0]])), Tensor(np.array([[0.0, 1.0]]))).item()
    ok = psd and self_zero and perm_exact and abs(worked - 0.125) <= 1e-12
    verdict("2 style loss", ok, f"gram sym/PSD on 1000 maps={psd}, L(R,R)==0 {self_zero}, "
            f"permutation exact={perm_exact}, worked value {worked!r} vs 0.125")
    assert ok


# ---------------------------------------------------------------- 3

def _log_softmax(z):
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def _independent_terms(model, batch, rng_seed):
    """Recompute the four terms with plain numpy from the networks' forward outputs."""
    B = len(batch)
    refs = [model.embed_net.encode(batch.mel[i, :batch.lengths[i]]) for i in range(B)]
    e = Tensor(np.stack([r.embedding.data for r in refs]))
    res = model.synth.forward_teacher_forced(batch.chars, batch.char_mask, batch.mel, e,
                                             np.random.default_rng(rng_seed))
    terms = {k: 0.0 for k in TERMS}
    for i in range(B):
        n, y = int(batch.lengths[i]), int(batch.labels[i])
        pred, z = res.mel.data[i, :n], res.stop_logits.data[i, :n]
        t = batch.stop[i, :n]
        bce = np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - z * t)
        terms["l_tac"] += np.mean((pred - batch.mel[i, :n]) ** 2) + bce
        aux = model.aux_net.encode(Tensor(pred))
        Rm, Sm = refs[i].feature_map.data, aux.feature_map.data
        d = Sm.T @ Sm - Rm.T @ Rm
        terms["l_sty"] += np.sum(d * d) / (2.0 * Sm.shape[1] * Sm.shape[0]) ** 2
        terms["l_cls_src"] += -_log_softmax(refs[i].logits.data)[y]
        terms["l_cls_tgt"] += -_log_softmax(aux.logits.data)[y]
    return {k: v / B for k, v in terms.items()}


def test_c3_additivity_and_ablation(verdict):
    items = generate_items(SEED, 10, neutral_factor=1)
    model = EmotionalTTS(seed=SEED)
    rng = np.random.default_rng(SEED)
    worst_sum = worst_sub = 0.0
    for k in range(3):
        batch = make_batch([items[i] for i in np.sort(rng.choice(len(items), 4, replace=False))])
        full = batch_objective(model, batch, rng=np.random.default_rng(k))
        ind = _independent_terms(model, batch, k)
        worst_sum = max(worst_sum, abs(full.l_total - sum(ind[t] for t in TERMS)))
        for disabled in (("l_sty",), ("l_cls_src",), ("l_cls_tgt",), ("l_sty", "l_cls_src", "l_cls_tgt")):
            part = batch_objective(model, batch, disabled=disabled, rng=np.random.default_rng(k))
            expect = 0.0
            for t in TERMS:
                if t not in disabled:
                    expect += getattr(full, t)
            worst_sub = max(worst_sub, abs(part.l_total - expect))
    ok = worst_sum <= 1e-12 and worst_sub <= 1e-12
    verdict("3 additivity", ok, f"|l_total - sum of independent terms| max {worst_sum:.1e}, "
            f"ablation sub-sum error max {worst_sub:.1e} (<= 1e-12)")
    assert ok


# ---------------------------------------------------------------- 4

def test_c4_training_sanity(verdict):
    items = generate_items(SEED, 10, neutral_factor=1)
    assert len(items) == 70
    start = time.perf_counter()
    state = train(items, TrainConfig(seed=SEED, steps=300))
    elapsed = time.perf_counter() - start
    totals = np.array([m["l_total"] for m in state.metrics])
    first, last = totals[:10].mean(), totals[-10:].mean()
    ok = last <= 0.5 * first and elapsed < 600
    verdict("4 training", ok, f"mean l_total first 10 steps {first:.4f}, last 10 {last:.4f} "
            f"(ratio {last / first:.3f} <= 0.5), {elapsed:.0f}s (< 600s)")
    assert ok


# ---------------------------------------------------------------- 5

def test_c5_emotion_transfer(desk_runs, verdict):
    runs, states = desk_runs
    test = runs["full"].test_set()
    acc = {name: E.emotion_confusion(s.model, test, seed=SEED).macro_accuracy() for name, s in states.items()}
    hard = acc["full"] >= 0.85
    verdict("5a transfer accuracy", hard, f"full-loss oracle macro accuracy {acc['full']:.3f} over "
            f"{len(test)} held-out texts (>= 0.85, chance {1 / len(EMOTIONS):.3f})")
    soft = acc["full"] >= acc["tac_only"]
    verdict("5b full vs L_tac", soft, f"full {acc['full']:.3f} >= L_tac-only {acc['tac_only']:.3f}", soft=True)
    # the comparison is a soft, seeded criterion: reported, not asserted
    assert hard


# ---------------------------------------------------------------- 6

def test_c6_strength_control(desk_runs, sweeps, verdict):
    _, states = desk_runs
    model = states["full"].model
    refs, texts, sw, _ = sweeps
    worst = 0.0
    for ref in refs.values():
        for a in SWEEP_ALPHAS:
            res = transfer(StrengthRequest(ref.mel, texts[0], a), model, max_frames=8)
            e = res.encoding.embedding.data
            worst = max(worst, abs(np.linalg.norm(res.e_scaled) - a * np.linalg.norm(e)) / (a * np.linalg.norm(e)))
    norm_ok = worst <= 1e-12
    verdict("6a norm homogeneity", norm_ok, f"max relative |‖αe‖ - α‖e‖| {worst:.1e} for α in {SWEEP_ALPHAS}")

    so = E.strength_ordering(sw, SWEEP_ALPHAS)
    n = so.n_recovered()
    order_ok = n >= 5
    scores = {EMOTIONS[k]: np.round(v, 3).tolist() for k, v in so.mean_scores.items()}
    verdict("6b strength ordering", order_ok, f"ordering recovered for {n}/6 emotions (>= 5); mean scores {scores}")

    prox = E.neutral_proximity(model, refs, texts)
    nearer = sum(lo < hi for lo, hi in prox.values())
    detail = {EMOTIONS[k]: (round(lo, 3), round(hi, 3)) for k, (lo, hi) in prox.items()}
    soft_ok = nearer >= 4
    verdict("6c alpha 0.1 toward neutral", soft_ok,
            f"{nearer}/6 emotions nearer the neutral centroid at α=0.1 than at α=1.0 (>= 4); "
            f"(d0.1, d1.0) {detail}", soft=True)
    # soft, seeded criterion: reported, not asserted
    assert norm_ok and order_ok


# ---------------------------------------------------------------- 7

def test_c7_cluster_separation(desk_runs, sweeps, verdict):
    _, states = desk_runs
    report = E.cluster_report(states["full"].model, sweeps[3])
    sil = {EMOTIONS[k]: v["silhouette"] for k, v in report.items()}
    ok = len(sil) == 7 and all(s > 0 for s in sil.values())
    verdict("7 cluster separation", ok, "PCA silhouette of the three α groups per emotion (> 0): "
            + ", ".join(f"{k} {v:.3f}" for k, v in sil.items()))
    assert ok


# ---------------------------------------------------------------- 8

def _dir_bytes(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_c8_infrastructure(tmp_path, verdict):
    a = generate_corpus(SEED, 10, tmp_path / "a")
    b = generate_corpus(SEED, 10, tmp_path / "b")
    corpus_same = _dir_bytes(a) == _dir_bytes(b)

    items = generate_items(SEED, 10, neutral_factor=1)
    cfg = TrainConfig(seed=SEED, steps=4, batch_size=4)
    s1, s2 = train(items, cfg), train(items, cfg)
    ckpt_same = checkpoint_bytes(s1) == checkpoint_bytes(s2)

    save_checkpoint(s1, tmp_path / "s1.ckpt")
    back = load_checkpoint(tmp_path / "s1.ckpt")
    p1, p2 = s1.model.parameters(), back.model.parameters()
    round_trip = (p1.keys() == p2.keys() and all(np.array_equal(p1[k].data, p2[k].data) for k in p1)
                  and checkpoint_bytes(back) == checkpoint_bytes(s1))

    save_checkpoint(train(items, with_overrides(cfg, steps=2)), tmp_path / "half.ckpt")
    resumed = train(items, cfg, state=load_checkpoint(tmp_path / "half.ckpt"))
    resume_same = (resumed.metrics == s1.metrics[2:]
                   and checkpoint_bytes(resumed) == checkpoint_bytes(s1))

    ok = corpus_same and ckpt_same and round_trip and resume_same
    verdict("8 infrastructure", ok, f"corpus bytes identical={corpus_same}, checkpoint bytes identical={ckpt_same}, "
            f"round trip exact={round_trip}, resume matches uninterrupted={resume_same}")
    assert ok


# ---------------------------------------------------------------- 9

def test_c9_audio_frontend(verdict):
    sr = 16000
    t = np.arange(sr) / sr
    f0 = audio.pitch_contour(0.5 * np.sin(2 * np.pi * 220 * t)).f0[1:-1]
    pitch_err = float(np.abs(f0 - 220.0).max())
    tone = 0.5 * np.sin(2 * np.pi * 1000 * t)
    expected = int(np.argmin(np.abs(audio.mel_band_centers() - 1000.0)))
    bands = audio.mel_spectrogram(tone).frames.argmax(axis=1)
    band_ok = bool(np.all(bands == expected))
    x = 0.25 * np.sin(2 * np.pi * 700 * t)
    lo, hi = audio.mel_spectrogram(x).frames, audio.mel_spectrogram(2 * x).frames
    floor = np.log(audio.LOG_FLOOR)
    free = (lo > floor) & (hi > floor)
    shift_err = float(np.abs(hi[free] - lo[free] - np.log(2.0)).max())
    ok = pitch_err <= 3.0 and band_ok and shift_err <= 1e-9
    verdict("9 audio", ok, f"220 Hz pitch max error {pitch_err:.3f} Hz (<= 3), 1 kHz argmax band {expected} "
            f"on every frame={band_ok}, doubling shift error {shift_err:.1e} (<= 1e-9)")
    assert ok
