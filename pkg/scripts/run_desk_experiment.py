"""Seeded desk experiment: train the full and L_tac-only models, then score them with the oracles.

    python3 scripts/run_desk_experiment.py --out results/desk [--steps 2000] [--train-only]

Checkpoints are cached in --cache (default .runs/) so the acceptance suite and
this script share work.  Writes confusion, ordering, projection and pitch files
for the full model plus a two-column comparison against L_tac.
"""

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from emostrength import evaluation as E
from emostrength.corpus import EMOTIONS
from emostrength.experiment import FULL, TAC_ONLY, DeskRun, execute
from emostrength.inference import SWEEP_ALPHAS

ROOT = Path(__file__).resolve().parents[1]
N_TEXTS = 5  # texts per emotion in each strength sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(ROOT / "results" / "desk"))
    ap.add_argument("--cache", default=str(ROOT / ".runs"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--max-frames", type=int, default=400)
    ap.add_argument("--train-only", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    runs = {name: DeskRun(args.seed, args.steps, disabled_terms=dis) for name, dis in
            (("full", FULL), ("tac_only", TAC_ONLY))}
    states = {}
    for name, run in runs.items():
        states[name], secs = execute(run, args.cache, metrics_path=out / f"metrics_{name}.jsonl")
        logging.info("%s: %d steps in %.0fs", name, states[name].step, secs)
    if args.train_only:
        return

    test = runs["full"].test_set()
    summary = {}
    for name, state in states.items():
        cm = E.emotion_confusion(state.model, test, seed=args.seed, max_frames=args.max_frames)
        cm.write_csv(out / f"confusion_{name}.csv")
        summary[f"macro_accuracy_{name}"] = cm.macro_accuracy()
        summary[f"per_class_{name}"] = dict(zip(EMOTIONS, cm.per_class_accuracy().round(4).tolist()))

    model = states["full"].model
    refs = E.pick_references(test, args.seed)
    texts = [test[i].chars for i in np.random.default_rng(args.seed).choice(len(test), N_TEXTS, replace=False)]
    sweeps, records = E.run_sweeps(model, refs, texts, SWEEP_ALPHAS, args.max_frames)
    so = E.strength_ordering(sweeps, SWEEP_ALPHAS)
    summary["ordering_recovered"] = {EMOTIONS[k]: so.recovered(k) for k in so.matrices}
    summary["ordering_mean_scores"] = {EMOTIONS[k]: v.round(4).tolist() for k, v in so.mean_scores.items()}
    E.pitch_contour_csv(records, out / "pitch_contours.csv")

    report = E.cluster_report(model, records)
    summary["silhouette"] = {EMOTIONS[k]: v["silhouette"] for k, v in report.items()}
    with open(out / "projection.csv", "w", encoding="utf-8") as fh:
        fh.write("emotion,alpha,pc1,pc2\n")
        for rep in report.values():
            for (lab, a), (x, y) in zip(rep["projection"].tags, rep["projection"].coords):
                fh.write(f"{EMOTIONS[lab]},{a},{x:.6f},{y:.6f}\n")

    near = {EMOTIONS[k]: {"d_alpha_0.1": lo, "d_alpha_1.0": hi, "nearer": lo < hi}
            for k, (lo, hi) in E.neutral_proximity(model, refs, texts, max_frames=args.max_frames).items()}
    summary["alpha_0.1_neutral"] = near

    E.write_jsonl([summary], out / "summary.jsonl")
    print(json.dumps(summary, indent=1, default=float))


if __name__ == "__main__":
    main()
