"""Machine-checkable stand-ins for listening tests, plus the loss ablation grid.

Human raters are replaced by the corpus oracles: a nearest-centroid
classifier for emotion category and a signature-projection regressor for
strength.  Embedding clusters are examined with PCA and silhouette.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.metrics import silhouette_score

from . import tensor as T
from .corpus import EMOTIONS, FLOOR, CentroidOracle, CorpusItem, StrengthRegressor
from .inference import SWEEP_ALPHAS, StrengthRequest, band_centroid, transfer
from .training import EmotionalTTS, ModelConfig, TrainConfig, train, with_overrides


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted
    labels: tuple = EMOTIONS
    normalization: str = "row"

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def per_class_accuracy(self) -> np.ndarray:
        return np.diag(self.normalized())

    def macro_accuracy(self) -> float:
        present = self.counts.sum(axis=1) > 0
        return float(self.per_class_accuracy()[present].mean())

    def to_rows(self) -> list[list]:
        return [[self.labels[i], *map(int, self.counts[i])] for i in range(len(self.labels))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *self.labels])
            w.writerows(self.to_rows())


def chance_band(n: int, k: int = len(EMOTIONS), sigmas: float = 3.0) -> tuple[float, float]:
    """Accuracy interval a chance-level classifier stays inside with ``sigmas`` binomial margin."""
    p = 1.0 / k
    half = sigmas * math.sqrt(p * (1 - p) / n)
    return p - half, p + half


def pick_references(items: Sequence[CorpusItem], seed: int) -> dict[int, CorpusItem]:
    """One randomly chosen reference utterance per emotion present in ``items``."""
    rng = np.random.default_rng(seed)
    refs = {}
    for label in range(len(EMOTIONS)):
        pool = [it for it in items if it.label == label]
        if pool:
            refs[label] = pool[int(rng.integers(len(pool)))]
    return refs


def emotion_confusion(model: EmotionalTTS, test_items: Sequence[CorpusItem], oracle: CentroidOracle | None = None,
                      references: dict[int, CorpusItem] | None = None, seed: int = 0,
                      max_frames: int = 400) -> ConfusionMatrix:
    """Synthesize every test text with its emotion's reference at alpha 1 and let the oracle label it."""
    if not test_items:
        raise ValueError("emotion_confusion needs a non-empty test set")
    oracle = oracle or CentroidOracle.from_signatures()
    references = references or pick_references(test_items, seed)
    counts = np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64)
    for it in test_items:
        res = transfer(StrengthRequest(references[it.label].mel, it.chars, 1.0), model, max_frames=max_frames)
        counts[it.label, oracle.classify(res.mel)] += 1
    return ConfusionMatrix(counts)


def oracle_confusion(items: Sequence[CorpusItem], oracle: CentroidOracle | None = None) -> ConfusionMatrix:
    oracle = oracle or CentroidOracle.from_signatures()
    counts = np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64)
    for it in items:
        counts[it.label, oracle.classify(it.mel)] += 1
    return ConfusionMatrix(counts)


# ---------------------------------------------------------------- strength

@dataclass
class StrengthOrdering:
    alphas: tuple
    matrices: dict[int, np.ndarray]        # per emotion, rows = true rank, cols = predicted rank
    pairwise_accuracy: dict[int, float]
    mean_scores: dict[int, np.ndarray]     # regressor output averaged over sweeps, per alpha

    def recovered(self, label: int) -> bool:
        """Ordering recovered when the averaged regressor score rises strictly with alpha."""
        return bool(np.all(np.diff(self.mean_scores[label]) > 0))

    def n_recovered(self, labels: Sequence[int] | None = None) -> int:
        labels = labels if labels is not None else [k for k in self.matrices if EMOTIONS[k] != "neutral"]
        return sum(self.recovered(k) for k in labels)


def strength_ordering(sweeps: dict[int, Sequence[Sequence[np.ndarray]]], alphas: Sequence[float] = SWEEP_ALPHAS,
                      regressor: StrengthRegressor | None = None) -> StrengthOrdering:
    """``sweeps[label]`` is a list of sweeps; each sweep holds one mel per alpha, in ``alphas`` order."""
    regressor = regressor or StrengthRegressor()
    k = len(alphas)
    true_rank = np.argsort(np.argsort(alphas, kind="stable"), kind="stable")
    matrices, pairwise, means = {}, {}, {}
    for label, group in sweeps.items():
        mat = np.zeros((k, k), dtype=np.int64)
        good = total = 0
        scores = []
        for mels in group:
            if len(mels) != k:
                raise ValueError(f"sweep has {len(mels)} outputs for {k} alpha values")
            pred = regressor.rank(mels, label)
            s = np.array([regressor.predict(m, label) for m in mels])
            scores.append(s)
            mat[true_rank, pred] += 1
            for i in range(k):
                for j in range(i + 1, k):
                    if alphas[i] != alphas[j]:
                        total += 1
                        good += (s[i] < s[j]) == (alphas[i] < alphas[j]) and s[i] != s[j]
        matrices[label] = mat
        pairwise[label] = good / total if total else float("nan")
        means[label] = np.mean(scores, axis=0) if scores else np.zeros(k)
    return StrengthOrdering(tuple(alphas), matrices, pairwise, means)


def run_sweeps(model: EmotionalTTS, references: dict[int, CorpusItem], texts: Sequence[np.ndarray],
               alphas: Sequence[float] = SWEEP_ALPHAS, max_frames: int = 400):
    """Mels and output embeddings for every (emotion, text, alpha)."""
    sweeps: dict[int, list[list[np.ndarray]]] = {}
    records = []
    for label, ref in sorted(references.items()):
        sweeps[label] = []
        for chars in texts:
            mels = []
            for a in alphas:
                mel = transfer(StrengthRequest(ref.mel, chars, a), model, max_frames=max_frames).mel
                mels.append(mel)
                records.append((label, float(a), mel))
            sweeps[label].append(mels)
    return sweeps, records


def neutral_proximity(model: EmotionalTTS, references: dict[int, CorpusItem], texts: Sequence[np.ndarray],
                      low: float = 0.1, high: float = 1.0, oracle: CentroidOracle | None = None,
                      max_frames: int = 400) -> dict[int, tuple[float, float]]:
    """Mean distance to the neutral centroid at a weak and a unit strength, per non-neutral emotion."""
    oracle = oracle or CentroidOracle.from_signatures()
    out = {}
    for label, ref in sorted(references.items()):
        if label == 0:
            continue
        d = [np.mean([oracle.neutral_distance(
                transfer(StrengthRequest(ref.mel, chars, a), model, max_frames=max_frames).mel)
                for chars in texts]) for a in (low, high)]
        out[label] = (float(d[0]), float(d[1]))
    return out


# ---------------------------------------------------------------- projection

@dataclass
class ProjectionPlotData:
    coords: np.ndarray               # (n, 2)
    tags: list
    explained_variance: np.ndarray   # fraction of total variance per component
    components: np.ndarray           # (2, d), rows orthonormal


def project_embeddings(embeddings, tags: Sequence | None = None) -> ProjectionPlotData:
    """Top-two PCA; each component's largest-magnitude loading is made positive."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3 or X.shape[1] < 2:
        raise ValueError(f"need at least 3 samples of dimension >= 2, got shape {X.shape}")
    tags = list(tags) if tags is not None else [None] * len(X)
    if len(tags) != len(X):
        raise ValueError(f"{len(tags)} tags for {len(X)} samples")
    Xc = X - X.mean(axis=0)
    _, sv, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:2].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    var = sv ** 2
    total = var.sum()
    ratio = var[:2] / total if total > 0 else np.zeros(2)
    if len(ratio) < 2:
        ratio = np.pad(ratio, (0, 2 - len(ratio)))
    coords = Xc @ comps.T if total > 0 else np.zeros((len(X), 2))
    return ProjectionPlotData(coords, tags, ratio, comps)


def silhouette(coords: np.ndarray, groups: Sequence) -> float:
    return float(silhouette_score(np.asarray(coords), np.asarray(groups)))


def cluster_report(model: EmotionalTTS, records, by_emotion: bool = True) -> dict:
    """Embed sweep outputs with the embedding net, project per emotion, score alpha clusters."""
    need = model.embed_net.config.downsample
    emb, labels, alphas = [], [], []
    with T.no_grad():
        for label, a, mel in records:
            if len(mel) < need:
                mel = np.concatenate([mel, np.full((need - len(mel), mel.shape[1]), FLOOR)])
            emb.append(model.embed_net.encode(mel, with_logits=False).embedding.data)
            labels.append(label)
            alphas.append(a)
    emb, labels, alphas = np.array(emb), np.array(labels), np.array(alphas)
    out = {}
    for label in sorted(set(labels.tolist())):
        sel = labels == label
        proj = project_embeddings(emb[sel], list(zip(labels[sel], alphas[sel])))
        try:
            score = silhouette(proj.coords, alphas[sel])
        except ValueError:
            score = float("nan")
        out[label] = {"projection": proj, "silhouette": score}
    return out


# ---------------------------------------------------------------- ablation

ABLATION_COLUMNS = {
    "L_tac": ("l_sty", "l_cls_src", "l_cls_tgt"),
    "+L_cls_tgt": ("l_sty", "l_cls_src"),
    "+L_cls_src": ("l_sty", "l_cls_tgt"),
    "+L_cls_src +L_cls_tgt": ("l_sty",),
    "L_total": (),
}


@dataclass
class AblationCell:
    column: str
    confusion: ConfusionMatrix
    head_calls: int      # classifier-head forward passes made inside the training loss
    final_loss: float
    metrics: list = field(default_factory=list, repr=False)


def ablation_cell(column: str, train_items, test_items, base: TrainConfig, model_config: ModelConfig | None = None,
                  oracle: CentroidOracle | None = None, max_frames: int = 400) -> AblationCell:
    cfg = with_overrides(base, disabled_terms=ABLATION_COLUMNS[column])
    state = train(train_items, cfg, model_config)
    m = state.model
    calls = m.embed_net.head_calls + m.aux_net.head_calls
    cm = emotion_confusion(m, test_items, oracle, seed=base.seed, max_frames=max_frames)
    return AblationCell(column, cm, calls, state.metrics[-1]["l_total"] if state.metrics else float("nan"),
                        state.metrics)


def ablation_grid(train_items, test_items, base: TrainConfig, columns: Sequence[str] | None = None,
                  model_config: ModelConfig | None = None, max_frames: int = 400) -> list[AblationCell]:
    """One training run per loss subset, all from the same seed, scored by the centroid oracle."""
    oracle = CentroidOracle.from_signatures()
    return [ablation_cell(c, train_items, test_items, base, model_config, oracle, max_frames)
            for c in (columns or ABLATION_COLUMNS)]


def write_ablation_csv(cells: Sequence[AblationCell], path) -> None:
    """Table layout: one row per emotion, one column per loss subset, plus a mean row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Loss", *[c.column for c in cells]])
        accs = [c.confusion.per_class_accuracy() for c in cells]
        for k, name in enumerate(EMOTIONS):
            w.writerow([name, *[f"{a[k]:.4f}" for a in accs]])
        w.writerow(["mean", *[f"{c.confusion.macro_accuracy():.4f}" for c in cells]])


def _jsonable(v):
    # NaN is not JSON; undefined scores become null
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_jsonl(records: Sequence[dict], path) -> None:
    lines = (json.dumps(_jsonable(r), sort_keys=True, allow_nan=False) + "\n" for r in records)
    Path(path).write_text("".join(lines), encoding="utf-8")


def pitch_contour_csv(records, path) -> None:
    """Per-frame band-centroid contours, one row per (emotion, alpha, frame)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["emotion", "alpha", "frame", "pitch_proxy"])
        for label, a, mel in records:
            for t, v in enumerate(band_centroid(mel)):
                w.writerow([EMOTIONS[label], a, t, f"{v:.6f}"])
