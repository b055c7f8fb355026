"""Command line entry point: corpus generation, training, gradient audit, synthesis, evaluation.

``EMOS_SEED`` in the environment overrides every ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as C
from . import evaluation as E
from . import gradcheck
from .inference import (
    SWEEP_ALPHAS, StrengthRequest, load_model, mel_features, strength_sweep, transfer,
    write_features_csv,
)
from .training import (
    ModelConfig, TrainConfig, load_checkpoint, save_checkpoint, train, with_overrides,
)

log = logging.getLogger("emostrength")


def resolve_seed(seed: int) -> int:
    env = os.environ.get("EMOS_SEED")
    return int(env) if env not in (None, "") else seed


def _alphas(text: str) -> list[float]:
    return [float(a) for a in text.split(",") if a.strip()]


def _out(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- commands

def cmd_gen_corpus(args) -> int:
    out = C.generate_corpus(resolve_seed(args.seed), args.n_per_emotion, args.out, args.strength_dist,
                            args.neutral_factor)
    print(f"wrote {sum(1 for _ in open(out / 'manifest.jsonl'))} items to {out}")
    return 0


def cmd_train(args) -> int:
    items = C.load_corpus(args.corpus)
    out = _out(args.out)
    if args.resume:
        state = load_checkpoint(args.resume)
        cfg = with_overrides(state.config, steps=args.steps)
    else:
        state = None
        cfg = TrainConfig(seed=resolve_seed(args.seed), steps=args.steps, batch_size=args.batch_size,
                          learning_rate=args.lr, checkpoint_every=args.checkpoint_every,
                          disabled_terms=tuple(args.disable), style_normalization=args.style_normalization)
    state = train(items, cfg, ModelConfig(), state=state, metrics_path=out / "metrics.jsonl",
                  checkpoint_dir=out)
    save_checkpoint(state, out / "final.ckpt")
    last = state.metrics[-1] if state.metrics else {}
    print(json.dumps({"step": state.step, "l_total": last.get("l_total")}, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    results = [gradcheck.check_op(n, args.points, resolve_seed(args.seed)) for n in gradcheck.REGISTRY]
    if not args.ops_only:
        results.append(gradcheck.check_composite(args.points, resolve_seed(args.seed)))
    for r in results:
        print(f"{r.name:24s} max_rel_err={r.worst:.3e}  {r.seconds:6.2f}s  {'PASS' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in results) else 1


def cmd_synthesize(args) -> int:
    out = _out(args.out)
    items = C.load_corpus(args.corpus) if args.corpus else None
    model = load_model(args.checkpoint)
    alphas = _alphas(args.sweep) if args.sweep else [args.alpha]
    warnings_log = []
    rows = []
    for a in alphas:
        res = transfer(StrengthRequest(args.ref, args.text, a), model, items, args.max_frames)
        warnings_log.extend(res.warnings)
        C.write_mel(out / f"alpha_{a:g}.f32", res.mel)
        rows.append({"alpha": a, **mel_features(res.mel), "truncated": bool(res.synthesis.truncated)})
    write_features_csv(rows, out / "features.csv")
    E.write_jsonl(warnings_log, out / "warnings.jsonl")
    print(f"wrote {len(rows)} mel(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    out = _out(args.out)
    seed = resolve_seed(args.seed)
    items = C.load_corpus(args.corpus)
    if args.what == "ablation":
        base = load_checkpoint(args.checkpoint).config if args.checkpoint else TrainConfig()
        base = with_overrides(base, seed=seed, steps=args.steps or base.steps)
        test = C.load_corpus(args.test_corpus) if args.test_corpus else C.generate_items(seed + 1, 10, neutral_factor=1)
        cells = E.ablation_grid(items, test, base, max_frames=args.max_frames)
        E.write_ablation_csv(cells, out / "ablation.csv")
        E.write_jsonl([{"column": c.column, "macro_accuracy": c.confusion.macro_accuracy(),
                        "classifier_head_calls": c.head_calls, "final_l_total": c.final_loss} for c in cells],
                      out / "ablation.jsonl")
        return 0
    model = load_model(args.checkpoint)
    refs = E.pick_references(items, seed)
    if args.what == "confusion":
        cm = E.emotion_confusion(model, items, references=refs, max_frames=args.max_frames)
        cm.write_csv(out / "confusion.csv")
        E.write_jsonl([{"macro_accuracy": cm.macro_accuracy(), "total": cm.total,
                        "per_class": dict(zip(C.EMOTIONS, cm.per_class_accuracy().round(6).tolist()))}],
                      out / "confusion.jsonl")
        return 0
    rng = np.random.default_rng(seed)
    texts = [items[i].chars for i in rng.choice(len(items), size=min(args.texts, len(items)), replace=False)]
    alphas = _alphas(args.alphas)
    sweeps, records = E.run_sweeps(model, refs, texts, alphas, args.max_frames)
    if args.what == "ordering":
        so = E.strength_ordering(sweeps, alphas)
        summary = []
        for label, mat in so.matrices.items():
            summary.append({"emotion": C.EMOTIONS[label], "matrix": mat.tolist(),
                            "pairwise_accuracy": so.pairwise_accuracy[label],
                            "mean_scores": so.mean_scores[label].tolist(), "recovered": so.recovered(label)})
        E.write_jsonl(summary, out / "ordering.jsonl")
        E.pitch_contour_csv(records, out / "pitch_contours.csv")
        return 0
    report = E.cluster_report(model, records)
    with open(out / "projection.csv", "w", encoding="utf-8") as fh:
        fh.write("emotion,alpha,pc1,pc2\n")
        for label, rep in report.items():
            for (lab, a), (x, y) in zip(rep["projection"].tags, rep["projection"].coords):
                fh.write(f"{C.EMOTIONS[lab]},{a},{x:.6f},{y:.6f}\n")
    E.write_jsonl([{"emotion": C.EMOTIONS[k], "silhouette": v["silhouette"],
                    "explained_variance": v["projection"].explained_variance.tolist()}
                   for k, v in report.items()], out / "projection.jsonl")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emostrength", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="write a synthetic emotional corpus")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-per-emotion", type=int, default=10)
    g.add_argument("--strength-dist", default="uniform:1.0,2.0")
    g.add_argument("--neutral-factor", type=int, default=10)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train on a corpus directory")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, default=300)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--disable", nargs="*", default=[], choices=["l_sty", "l_cls_src", "l_cls_tgt"])
    t.add_argument("--style-normalization", default="feature_map", choices=["feature_map", "gram"])
    t.add_argument("--resume", help="checkpoint to continue from; --steps is the new total")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("gradcheck", help="finite-difference audit of every op and the full loss")
    c.add_argument("--points", type=int, default=gradcheck.N_POINTS)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--ops-only", action="store_true")
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synthesize", help="transfer a reference's emotion onto new text")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--ref", required=True, help="corpus item id (needs --corpus) or a 16 kHz WAV path")
    s.add_argument("--corpus")
    s.add_argument("--text", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--sweep", help="comma-separated alphas, e.g. 0.5,1.5,2.5; overrides --alpha")
    s.add_argument("--max-frames", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synthesize)

    e = sub.add_parser("eval", help="oracle-scored evaluations")
    e.add_argument("what", choices=["confusion", "ordering", "project", "ablation"])
    e.add_argument("--checkpoint", help="trained model (for ablation: source of the base config)")
    e.add_argument("--corpus", required=True, help="test set; for ablation, the training set")
    e.add_argument("--test-corpus", help="ablation only: held-out set (default: a fresh seeded draw)")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--alphas", default=",".join(str(a) for a in SWEEP_ALPHAS))
    e.add_argument("--texts", type=int, default=3, help="texts per emotion in a sweep")
    e.add_argument("--steps", type=int, default=0, help="ablation only: steps per cell")
    e.add_argument("--max-frames", type=int, default=400)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "eval" and args.what != "ablation" and not args.checkpoint:
        print("eval: --checkpoint is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (C.CorpusCorruptionError, ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
