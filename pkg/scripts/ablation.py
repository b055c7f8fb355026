"""Loss-subset ablation: one seeded training run per column, oracle accuracy per emotion.

    python3 scripts/ablation.py --steps 2000 --out results/ablation

Five cells at 2000 steps take a little over two hours on one core; use
--steps 300 for a quick look.  Every cell starts from the same seed.
"""

import argparse
import json
import logging
from pathlib import Path

from emostrength import evaluation as E
from emostrength.experiment import DeskRun

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(ROOT / "results" / "ablation"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--columns", nargs="*", default=list(E.ABLATION_COLUMNS), choices=list(E.ABLATION_COLUMNS))
    ap.add_argument("--max-frames", type=int, default=400)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    run = DeskRun(args.seed, args.steps)
    cells = E.ablation_grid(run.corpus(), run.test_set(), run.train_config(), args.columns,
                            max_frames=args.max_frames)
    E.write_ablation_csv(cells, out / "ablation.csv")
    rows = [{"column": c.column, "macro_accuracy": c.confusion.macro_accuracy(),
             "classifier_head_calls": c.head_calls, "final_l_total": c.final_loss} for c in cells]
    E.write_jsonl(rows, out / "ablation.jsonl")
    print((out / "ablation.csv").read_text())
    print(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
