"""Model bundle, batched objective, optimiser, training loop and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .corpus import Batch, CorpusItem, make_batch
from .emotion_net import EmotionNet, EmotionNetConfig
from .losses import TERMS, LossBreakdown, combine, style_loss
from .synthesizer import Synthesizer, SynthesizerConfig
from .tensor import Tensor

log = logging.getLogger(__name__)

MAGIC = b"EMOS"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    synth: SynthesizerConfig = field(default_factory=SynthesizerConfig)
    emotion: EmotionNetConfig = field(default_factory=EmotionNetConfig)

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """A scaled-down network for fast finite-difference checks."""
        return cls(
            SynthesizerConfig(char_dim=4, prenet_dim=5, encoder_hidden=3, emotion_dim=4, attention_dim=3,
                              decoder_hidden=4, decoder_prenet_dim=3, n_mels=8),
            EmotionNetConfig(n_mels=8, conv_channels=(2, 2, 3, 3, 4, 4), gru_hidden=3, ref_dim=3, hidden=4))

    def to_dict(self) -> dict:
        return {"synth": asdict(self.synth), "emotion": asdict(self.emotion)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        emo = dict(d["emotion"])
        emo["conv_channels"] = tuple(emo["conv_channels"])
        return cls(SynthesizerConfig(**d["synth"]), EmotionNetConfig(**emo))


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    steps: int = 300
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    checkpoint_every: int = 0
    loss_weights: dict = field(default_factory=dict)
    disabled_terms: tuple = ()
    style_normalization: str = "feature_map"
    emotion_scalar: float = 1.0

    def __post_init__(self):
        if self.batch_size <= 0 or self.steps < 0 or self.learning_rate < 0 or self.clip_norm <= 0:
            raise ValueError(f"invalid training config {self}")
        if self.emotion_scalar != 1.0:
            raise ValueError("the emotion scalar is fixed at 1.0 during training")
        unknown = set(self.disabled_terms) | set(self.loss_weights)
        unknown -= set(TERMS)
        if unknown or "l_tac" in self.disabled_terms:
            raise ValueError(f"bad loss-term overrides {sorted(unknown) or ['l_tac']}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["disabled_terms"] = list(self.disabled_terms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["disabled_terms"] = tuple(d.get("disabled_terms", ()))
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class EmotionalTTS:
    """Synthesizer plus the embedding network (reference side) and auxiliary network (output side)."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        if self.config.synth.emotion_dim != self.config.emotion.hidden:
            raise ValueError("synthesizer emotion_dim must equal the classifier hidden size")
        rng = np.random.default_rng([seed, 7])
        self.synth = Synthesizer(self.config.synth, rng)
        self.embed_net = EmotionNet(self.config.emotion, rng)
        self.aux_net = EmotionNet(self.config.emotion, rng)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, part in (("synth", self.synth), ("embed", self.embed_net), ("aux", self.aux_net)):
            for name, t in part.params.items():
                out[f"{prefix}.{name}"] = t
        return out

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(values)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)[:5]}")
        for name, t in params.items():
            if values[name].shape != t.shape:
                raise CheckpointError(f"{name}: checkpoint shape {values[name].shape}, model {t.shape}")
            t.data = np.array(values[name], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    def embed(self, mel: np.ndarray, with_logits: bool = True):
        return self.embed_net.encode(mel, with_logits=with_logits)


def batch_objective(model: EmotionalTTS, batch: Batch, weights: dict | None = None,
                    disabled: Sequence[str] = (), rng: np.random.Generator | None = None,
                    normalization: str = "feature_map") -> LossBreakdown:
    """Four-term objective averaged over the batch.

    Every term is computed per item on that item's unpadded frames and then
    averaged, so padding never reaches a loss.  Disabled terms skip their
    network passes entirely (the auxiliary net is not run when both of its
    terms are off, and no classifier head runs for a disabled
    classification term).
    """
    disabled = set(disabled)
    B = len(batch)
    want_src = "l_cls_src" not in disabled
    want_tgt = "l_cls_tgt" not in disabled
    want_sty = "l_sty" not in disabled
    ref_out = [model.embed_net.encode(batch.mel[i, :batch.lengths[i]], with_logits=want_src) for i in range(B)]
    e = T.stack([o.embedding for o in ref_out], axis=0)
    result = model.synth.forward_teacher_forced(batch.chars, batch.char_mask, batch.mel, e, rng)
    acc = {name: [] for name in TERMS}
    stops = []
    for i in range(B):
        n = int(batch.lengths[i])
        pred = T.take(result.mel, (i, slice(0, n)))
        stop = T.bce_with_logits(T.take(result.stop_logits, (i, slice(0, n))), batch.stop[i, :n])
        stops.append(stop)
        acc["l_tac"].append(T.add(T.mse(pred, batch.mel[i, :n]), stop))
        if want_src:
            acc["l_cls_src"].append(T.softmax_cross_entropy(ref_out[i].logits, int(batch.labels[i])))
        if want_sty or want_tgt:
            aux = model.aux_net.encode(pred, with_logits=want_tgt)
            if want_sty:
                acc["l_sty"].append(style_loss(ref_out[i].feature_map, aux.feature_map, normalization))
            if want_tgt:
                acc["l_cls_tgt"].append(T.softmax_cross_entropy(aux.logits, int(batch.labels[i])))

    def mean(values):
        total = values[0]
        for v in values[1:]:
            total = T.add(total, v)
        return T.scale(total, 1.0 / len(values))

    terms = {name: (mean(vals) if vals else None) for name, vals in acc.items()}
    return combine(terms, weights, mean(stops))


# ---------------------------------------------------------------- optimiser

def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    sq = 0.0
    for t in params.values():
        if t.grad is not None:
            sq += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for t in params.values():
            if t.grad is not None:
                t.grad *= factor
    return norm


def global_norm(params: dict[str, Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params.values() if t.grad is not None)))


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v, g = self.m[k], self.v[k], p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p.data = p.data - (self.lr / c1) * m / denom


# ---------------------------------------------------------------- state & checkpoints

@dataclass
class TrainState:
    model: EmotionalTTS
    optimizer: Adam
    rng: np.random.Generator
    config: TrainConfig
    step: int = 0
    metrics: list = field(default_factory=list)


def new_state(config: TrainConfig, model_config: ModelConfig | None = None) -> TrainState:
    model = EmotionalTTS(model_config, seed=config.seed)
    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    return TrainState(model, opt, np.random.default_rng(config.seed), config)


def _tensor_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return (struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())


def checkpoint_bytes(state: TrainState) -> bytes:
    header = json.dumps({
        "train_config": state.config.to_dict(),
        "model_config": state.model.config.to_dict(),
        "step": state.step,
        "optimizer_t": state.optimizer.t,
        "rng_state": state.rng.bit_generator.state,
    }, sort_keys=True).encode("utf-8")
    tensors = []
    for name, t in state.model.parameters().items():
        tensors.append(_tensor_record(f"param/{name}", t.data))
        tensors.append(_tensor_record(f"adam.m/{name}", state.optimizer.m[name]))
        tensors.append(_tensor_record(f"adam.v/{name}", state.optimizer.v[name]))
    body = (MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<I", len(header)) + header
            + struct.pack("<I", len(tensors)) + b"".join(tensors))
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: TrainState, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(state))


def _parse_checkpoint(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(raw) < 12 + 32:
        raise CheckpointError("checkpoint truncated: shorter than its fixed header")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (this build reads {FORMAT_VERSION})")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint corrupted or truncated: content hash mismatch")
    (hlen,) = struct.unpack_from("<I", body, 8)
    header = json.loads(body[12:12 + hlen].decode("utf-8"))
    pos = 12 + hlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", body, pos)
        name = body[pos + 4:pos + 4 + nlen].decode("utf-8")
        pos += 4 + nlen
        (ndim,) = struct.unpack_from("<I", body, pos)
        shape = struct.unpack_from(f"<{ndim}I", body, pos + 4)
        pos += 4 + 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(body):
        raise CheckpointError(f"checkpoint has {len(body) - pos} trailing bytes")
    return header, tensors


def load_checkpoint(path) -> TrainState:
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    try:
        header, tensors = _parse_checkpoint(raw)
    except (struct.error, ValueError, UnicodeDecodeError) as err:
        raise CheckpointError(f"checkpoint corrupted: {err}") from err
    config = TrainConfig.from_dict(header["train_config"])
    model = EmotionalTTS(ModelConfig.from_dict(header["model_config"]), seed=config.seed)
    model.load_parameters({k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")})
    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    opt.t = header["optimizer_t"]
    for name in opt.m:
        opt.m[name] = tensors[f"adam.m/{name}"]
        opt.v[name] = tensors[f"adam.v/{name}"]
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    return TrainState(model, opt, rng, config, header["step"])


# ---------------------------------------------------------------- loop

def train_step(state: TrainState, items: Sequence[CorpusItem]) -> LossBreakdown:
    cfg = state.config
    n = min(cfg.batch_size, len(items))
    idx = np.sort(state.rng.choice(len(items), size=n, replace=False))
    batch = make_batch([items[i] for i in idx])
    state.model.zero_grad()
    losses = batch_objective(state.model, batch, cfg.loss_weights, cfg.disabled_terms, state.rng,
                             cfg.style_normalization)
    if not np.isfinite(losses.l_total):
        raise TrainingError(f"non-finite loss at step {state.step + 1}: {losses}")
    losses.total.backward()
    grad_norm = clip_gradients(state.optimizer.params, cfg.clip_norm)
    state.optimizer.step()
    state.step += 1
    rec = losses.record(state.step)
    rec["grad_norm"] = grad_norm
    state.metrics.append(rec)
    return losses


def train(items: Sequence[CorpusItem], config: TrainConfig, model_config: ModelConfig | None = None,
          state: TrainState | None = None, metrics_path=None, checkpoint_dir=None,
          callback: Callable[[TrainState, LossBreakdown], None] | None = None) -> TrainState:
    """Run until ``config.steps``; resumes from ``state.step`` when a state is passed in."""
    if not items:
        raise ValueError("training corpus is empty")
    state = state or new_state(config, model_config)
    if state.config != config:
        state.config = config
    sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    try:
        while state.step < config.steps:
            losses = train_step(state, items)
            if sink:
                sink.write(json.dumps(state.metrics[-1], sort_keys=True) + "\n")
            if state.step % 50 == 0:
                log.info("step %d total %.4f tac %.4f sty %.4g src %.4f tgt %.4f", state.step,
                         losses.l_total, losses.l_tac, losses.l_sty, losses.l_cls_src, losses.l_cls_tgt)
            if checkpoint_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_checkpoint(state, Path(checkpoint_dir) / f"step{state.step:06d}.ckpt")
            if callback:
                callback(state, losses)
    finally:
        if sink:
            sink.close()
    return state


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
