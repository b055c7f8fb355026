import json

import numpy as np
import pytest

from emostrength import tensor as T
from emostrength.corpus import CorpusItem, generate_items, make_batch
from emostrength.losses import TERMS
from emostrength.training import (
    FORMAT_VERSION, CheckpointError, EmotionalTTS, ModelConfig, TrainConfig, TrainingError,
    batch_objective, checkpoint_bytes, clip_gradients, global_norm, load_checkpoint, new_state,
    save_checkpoint, train, train_step,
)

TINY = ModelConfig.tiny()


@pytest.fixture(scope="module")
def tiny_items():
    # the tiny model reads 8 bands; keep the first 8 of each generated mel
    items = generate_items(0, 10, neutral_factor=1)
    return [CorpusItem(it.id, it.chars, it.mel[:, :8], it.label, it.strength) for it in items]


def _cfg(**kw):
    base = dict(seed=3, batch_size=3, steps=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="fixed at 1.0"):
        TrainConfig(emotion_scalar=2.0)
    with pytest.raises(ValueError):
        TrainConfig(disabled_terms=("l_tac",))
    with pytest.raises(ValueError):
        TrainConfig(loss_weights={"l_bogus": 1.0})


def test_config_round_trip():
    cfg = _cfg(disabled_terms=("l_sty",), loss_weights={"l_tac": 2.0})
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert ModelConfig.from_dict(json.loads(json.dumps(TINY.to_dict()))) == TINY


def test_default_hyperparameters():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.clip_norm) == (
        8, 1e-3, 0.9, 0.999, 1e-8, 1.0)
    assert cfg.loss_weights == {} and cfg.emotion_scalar == 1.0


def test_two_nets_are_independent():
    m = EmotionalTTS(TINY, seed=0)
    for name, p in m.embed_net.params.items():
        q = m.aux_net.params[name]
        assert p is not q
        if "kernel" in name:
            assert not np.array_equal(p.data, q.data)


def test_zero_learning_rate_leaves_params(tiny_items):
    state = new_state(_cfg(learning_rate=0.0), TINY)
    before = {k: v.data.copy() for k, v in state.model.parameters().items()}
    train(tiny_items, state.config, state=state)
    for k, v in state.model.parameters().items():
        np.testing.assert_array_equal(v.data, before[k])


def test_same_seed_same_metrics(tiny_items, tmp_path):
    a = train(tiny_items, _cfg(), TINY, metrics_path=tmp_path / "a.jsonl")
    b = train(tiny_items, _cfg(), TINY, metrics_path=tmp_path / "b.jsonl")
    assert a.metrics == b.metrics
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    recs = [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs] == [1, 2, 3]
    assert set(TERMS) | {"l_total", "step"} <= set(recs[0])


def test_checkpoint_round_trip_exact(tiny_items, tmp_path):
    state = train(tiny_items, _cfg(steps=2), TINY)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(state, p1)
    loaded = load_checkpoint(p1)
    for k, v in state.model.parameters().items():
        np.testing.assert_array_equal(loaded.model.parameters()[k].data, v.data)
        np.testing.assert_array_equal(loaded.optimizer.m[k], state.optimizer.m[k])
        np.testing.assert_array_equal(loaded.optimizer.v[k], state.optimizer.v[k])
    assert loaded.step == 2 and loaded.optimizer.t == 2
    assert loaded.rng.bit_generator.state == state.rng.bit_generator.state
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_layout(tiny_items):
    raw = checkpoint_bytes(new_state(_cfg(), TINY))
    assert raw[:4] == b"EMOS"
    assert int.from_bytes(raw[4:8], "little") == FORMAT_VERSION
    hlen = int.from_bytes(raw[8:12], "little")
    header = json.loads(raw[12:12 + hlen])
    assert set(header) == {"train_config", "model_config", "step", "optimizer_t", "rng_state"}


def test_truncated_checkpoint_fails_cleanly(tiny_items, tmp_path):
    state = new_state(_cfg(), TINY)
    raw = checkpoint_bytes(state)
    for cut in (3, 40, len(raw) // 2, len(raw) - 1):
        p = tmp_path / f"cut{cut}.ckpt"
        p.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)


def test_flipped_byte_detected(tmp_path):
    raw = bytearray(checkpoint_bytes(new_state(_cfg(), TINY)))
    raw[len(raw) // 2] ^= 1
    p = tmp_path / "x.ckpt"
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(p)


def test_newer_version_rejected(tmp_path):
    raw = bytearray(checkpoint_bytes(new_state(_cfg(), TINY)))
    raw[4:8] = (FORMAT_VERSION + 1).to_bytes(4, "little")
    p = tmp_path / "v.ckpt"
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_resume_matches_uninterrupted(tiny_items, tmp_path):
    full = train(tiny_items, _cfg(steps=4), TINY)
    half = train(tiny_items, _cfg(steps=2), TINY)
    save_checkpoint(half, tmp_path / "h.ckpt")
    resumed = load_checkpoint(tmp_path / "h.ckpt")
    resumed = train(tiny_items, _cfg(steps=4), state=resumed)
    assert resumed.metrics == full.metrics[2:]
    for k, v in full.model.parameters().items():
        np.testing.assert_array_equal(resumed.model.parameters()[k].data, v.data)


def test_checkpoint_interval(tiny_items, tmp_path):
    train(tiny_items, _cfg(steps=4, checkpoint_every=2), TINY, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == ["step000002.ckpt", "step000004.ckpt"]


def test_clip_contract():
    rng = np.random.default_rng(0)
    params = {str(i): T.Tensor(np.zeros(5), requires_grad=True) for i in range(4)}
    for scale in (1e-3, 1.0, 7.0, 1e6):
        for p in params.values():
            p.grad = scale * rng.normal(size=5)
        pre = clip_gradients(params, 1.0)
        post = global_norm(params)
        assert post <= 1.0 + 1e-9
        if pre <= 1.0:
            assert post == pytest.approx(pre, rel=1e-15)


@pytest.fixture(scope="module")
def fixed_batch(tiny_items):
    return make_batch([tiny_items[i] for i in (0, 15, 33)])


def test_ablation_reduces_to_tac(fixed_batch):
    model = EmotionalTTS(TINY, seed=1)
    full = batch_objective(model, fixed_batch)
    calls = model.aux_net.head_calls + model.embed_net.head_calls
    only = batch_objective(model, fixed_batch, disabled=("l_sty", "l_cls_src", "l_cls_tgt"))
    assert model.aux_net.head_calls + model.embed_net.head_calls == calls
    assert abs(only.l_total - full.l_tac) <= 1e-12
    assert only.l_total == only.l_tac


@pytest.mark.parametrize("disabled", [("l_sty",), ("l_cls_src",), ("l_cls_tgt",), ("l_sty", "l_cls_tgt")])
def test_ablation_subsums(fixed_batch, disabled):
    model = EmotionalTTS(TINY, seed=1)
    full = batch_objective(model, fixed_batch)
    part = batch_objective(model, fixed_batch, disabled=disabled)
    expected = 0.0
    for name in TERMS:
        if name not in disabled:
            expected += getattr(full, name)
    assert abs(part.l_total - expected) <= 1e-12
    for name in TERMS:
        assert getattr(part, name) == (0.0 if name in disabled else getattr(full, name))


def test_total_equals_sum_of_terms(fixed_batch):
    b = batch_objective(EmotionalTTS(TINY, seed=2), fixed_batch)
    assert abs(b.l_total - (b.l_tac + b.l_sty + b.l_cls_src + b.l_cls_tgt)) <= 1e-12


def test_masking_invariance(tiny_items):
    model = EmotionalTTS(TINY, seed=4)
    item = tiny_items[5]
    plain = batch_objective(model, make_batch([item]))
    padded = batch_objective(model, make_batch([item], pad_to=len(item.mel) + 37))
    for name in TERMS + ("l_total", "l_stop"):
        assert getattr(plain, name) == getattr(padded, name), name


def test_batch_mates_do_not_leak(tiny_items):
    # an item's terms are the same whether it shares a batch with a longer item or not
    model = EmotionalTTS(TINY, seed=4)
    a, b = tiny_items[2], max(tiny_items, key=lambda it: len(it.mel))
    alone = batch_objective(model, make_batch([a]))
    both = batch_objective(model, make_batch([a, b]))
    other = batch_objective(model, make_batch([b]))
    for name in TERMS:
        assert getattr(both, name) == pytest.approx((getattr(alone, name) + getattr(other, name)) / 2,
                                                    rel=1e-12, abs=1e-15)


def test_nan_loss_aborts_with_step(tiny_items):
    state = new_state(_cfg(), TINY)
    state.model.synth.params["frame.b"].data[:] = np.nan
    with pytest.raises(TrainingError, match="step 1"):
        train_step(state, tiny_items)


def test_empty_corpus():
    with pytest.raises(ValueError):
        train([], _cfg(), TINY)


def test_loss_decreases_on_tiny_run(tiny_items):
    state = train(tiny_items, _cfg(steps=30, batch_size=4, learning_rate=3e-3), TINY)
    first = np.mean([m["l_total"] for m in state.metrics[:5]])
    last = np.mean([m["l_total"] for m in state.metrics[-5:]])
    assert last < first
