import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emostrength import tensor as T
from emostrength.emotion_net import EmotionNet, EmotionNetConfig, classify
from emostrength.losses import style_loss
from emostrength.tensor import Tensor


@pytest.fixture(scope="module")
def net():
    return EmotionNet(EmotionNetConfig(), np.random.default_rng(0))


def test_architecture_contract(net):
    cfg = net.config
    assert len(cfg.conv_channels) == 6
    assert net.params["conv5.kernel"].shape == (128, 128, 3, 3)
    assert net.params["proj.W"].shape == (128, 128)
    assert net.params["cls1.W"].shape == (128, 256)
    assert net.params["cls2.W"].shape == (256, 256)
    assert net.params["head.W"].shape == (256, 7)


@pytest.mark.parametrize("n_frames", [64, 65, 640])
def test_feature_map_length(net, n_frames):
    mel = np.random.default_rng(n_frames).normal(size=(n_frames, 80))
    fmap = net.feature_map(mel)
    assert fmap.shape == (-(-n_frames // 64), net.config.feature_dim)


def test_too_short_mel_asks_for_padding(net):
    with pytest.raises(ValueError, match="pad it to at least 64"):
        net.encode(np.zeros((63, 80)))


def test_wrong_band_count(net):
    with pytest.raises(ValueError, match="bands"):
        net.encode(np.zeros((64, 40)))


def test_zero_input_gives_uniform_softmax(net):
    out = net.encode(np.zeros((64, 80)))
    assert np.all(out.feature_map.data == 0)
    assert np.ptp(out.logits.data) == 0
    cls, probs = classify(out.logits)
    assert cls == 0
    np.testing.assert_allclose(probs, 1 / 7, atol=1e-15)


def test_deterministic(net):
    mel = np.random.default_rng(1).normal(size=(100, 80))
    a, b = net.encode(mel), net.encode(mel)
    np.testing.assert_array_equal(a.embedding.data, b.embedding.data)
    np.testing.assert_array_equal(a.logits.data, b.logits.data)


def test_logits_vary_across_draws():
    mel = np.random.default_rng(2).normal(size=(64, 80))
    logits = np.array([EmotionNet(EmotionNetConfig(), np.random.default_rng(s)).encode(mel).logits.data
                       for s in range(10)])
    assert logits.std(axis=0).min() > 0


def test_embedding_nonnegative_and_sized(net):
    for s in range(3):
        out = net.encode(np.random.default_rng(10 + s).normal(size=(70, 80)))
        assert out.embedding.shape == (256,) and out.reference_embedding.shape == (128,)
        assert (out.embedding.data >= 0).all()


def test_head_skipped_when_asked(net):
    before = net.head_calls
    out = net.encode(np.zeros((64, 80)), with_logits=False)
    assert out.logits is None and net.head_calls == before


def test_feature_map_time_order():
    # perturbing the tail must reach the last time step of the map
    net = EmotionNet(EmotionNetConfig(), np.random.default_rng(3))
    mel = np.random.default_rng(4).normal(size=(128, 80))
    a = net.feature_map(mel).data
    mel2 = mel.copy()
    mel2[-8:] += 1.0
    b = net.feature_map(mel2).data
    assert np.abs(a[-1] - b[-1]).max() > 0


def test_gradients_reach_convs_from_both_losses():
    cfg = EmotionNetConfig()
    rng = np.random.default_rng(5)
    net = EmotionNet(cfg, rng)
    ref = EmotionNet(cfg, np.random.default_rng(6)).feature_map(rng.normal(size=(64, 80)))
    mel = rng.normal(size=(64, 80))
    for make_loss in (lambda o: T.softmax_cross_entropy(o.logits, 3),
                      lambda o: style_loss(Tensor(ref.data), o.feature_map)):
        for p in net.params.values():
            p.grad = None
        make_loss(net.encode(mel)).backward()
        for i in range(6):
            g = net.params[f"conv{i}.kernel"].grad
            assert g is not None and np.linalg.norm(g) > 0


def test_classify_examples():
    cls, p = classify(np.array([3.0, 0, 0, 0, 0, 0, 0]))
    assert cls == 0 and p[0] > 0.7
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=7, max_size=7), st.permutations(range(7)))
def test_classify_permutation_equivariant(logits, perm):
    logits = np.array(logits)
    _, p = classify(logits)
    _, q = classify(logits[list(perm)])
    np.testing.assert_allclose(q, p[list(perm)], rtol=1e-12, atol=1e-300)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_classify_tie_break_lowest_index():
    assert classify(np.array([0, 2, 2, 0, 0, 0, 0.0]))[0] == 1
