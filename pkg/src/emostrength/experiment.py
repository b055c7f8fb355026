"""Seeded desk-scale training runs, cached on disk by configuration and source digest.

A cached checkpoint is reused only when both the run configuration and every
source file on the training path are byte-identical to the ones that produced it, so
a code change always forces a fresh run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .corpus import generate_items
from .training import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)

FULL = ()
TAC_ONLY = ("l_sty", "l_cls_src", "l_cls_tgt")


@dataclass(frozen=True)
class DeskRun:
    seed: int = 0
    steps: int = 2000
    n_per_emotion: int = 10
    neutral_factor: int = 10
    disabled_terms: tuple = FULL

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, steps=self.steps, disabled_terms=tuple(self.disabled_terms))

    def corpus(self):
        return generate_items(self.seed, self.n_per_emotion, neutral_factor=self.neutral_factor)

    def test_set(self, per_emotion: int = 10):
        """Held-out draw from the next seed, balanced across emotions."""
        items = generate_items(self.seed + 1, 10, neutral_factor=1)
        return [it for i, it in enumerate(items) if i % 10 < per_emotion]


# modules whose code determines a trained checkpoint
TRAINING_PATH = ("tensor", "init", "audio", "corpus", "emotion_net", "synthesizer", "losses", "training",
                 "experiment")


def source_digest() -> str:
    h = hashlib.sha256()
    for name in TRAINING_PATH:
        path = Path(__file__).parent / f"{name}.py"
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run_key(run: DeskRun) -> str:
    blob = json.dumps(asdict(run), sort_keys=True).encode() + source_digest().encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def execute(run: DeskRun, cache_dir=None, metrics_path=None) -> tuple[TrainState, float]:
    """Train ``run`` (or load its cached result). Returns the state and training seconds."""
    ckpt = Path(cache_dir) / f"{run_key(run)}.ckpt" if cache_dir else None
    if ckpt is not None and ckpt.exists():
        state = load_checkpoint(ckpt)
        meta = json.loads(ckpt.with_suffix(".json").read_text())
        state.metrics = meta["metrics"]
        log.info("reusing cached run %s", ckpt.name)
        return state, meta["seconds"]
    start = time.perf_counter()
    state = train(run.corpus(), run.train_config(), metrics_path=metrics_path)
    seconds = time.perf_counter() - start
    if ckpt is not None:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(state, ckpt)
        ckpt.with_suffix(".json").write_text(json.dumps(
            {"run": asdict(run), "seconds": seconds, "metrics": state.metrics}, sort_keys=True))
    return state, seconds
