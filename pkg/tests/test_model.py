import json

import numpy as np
import pytest

from fatiguenet.errors import InvalidConfigError, InvalidSpecError, ShapeError
from fatiguenet.model import (
    IADAN, LossWeights, ResidualUnit, ScheduleParams, lambda_schedule, load_checkpoint,
    save_checkpoint, total_loss,
)
from fatiguenet.nn.gradcheck import grad_check


@pytest.fixture(scope="module")
def small_model():
    return IADAN(n_domains=4, seed=3, dtype=np.float64)


def _batch(rng, n=4, size=16):
    return rng.standard_normal((n, 6, size, size))


def test_lambda_schedule_endpoints():
    assert lambda_schedule(0.0) == 0.0
    assert lambda_schedule(1.0) == pytest.approx(0.19732, abs=1e-5)


def test_lambda_schedule_monotone_and_bounded():
    ps = np.linspace(0, 1, 101)
    lam = [lambda_schedule(p) for p in ps]
    assert np.all(np.diff(lam) > 0)
    assert max(lam) < 0.2
    assert lambda_schedule(1.0, ScheduleParams(gamma=5, k=1.0)) == pytest.approx(
        5 * lambda_schedule(1.0))


@pytest.mark.parametrize("p", [-0.01, 1.01])
def test_lambda_schedule_rejects_out_of_range(p):
    with pytest.raises(InvalidSpecError):
        lambda_schedule(p)


def test_invalid_weights_and_variant():
    with pytest.raises(InvalidSpecError):
        LossWeights(alpha=-1)
    with pytest.raises(InvalidSpecError):
        LossWeights(tau=0)
    with pytest.raises(InvalidConfigError):
        IADAN(variant="resnet")


def test_shapes_on_full_size_input():
    model = IADAN(n_domains=9)
    x = np.zeros((2, 6, 64, 64), np.float32)
    out = model.forward(x)
    s = model.shapes
    assert s["dilated_conv1"] == (2, 32, 32, 32)
    assert s["dilated_conv2"] == (2, 64, 16, 16)
    assert [s[f"block1.branch{i}"][1] for i in range(1, 5)] == [8, 16, 32, 8]
    assert out.embedding.shape == (2, 128)
    assert out.fatigue_logits.shape == (2, 3)
    assert out.domain_logits.shape == (2, 9)
    assert out.fatigue_logits.dtype == np.float32


@pytest.mark.parametrize("variant", ["iadan", "idan", "ian", "adan"])
def test_variants_run_on_small_input(rng, variant):
    model = IADAN(n_domains=5, variant=variant)
    out = model.forward(_batch(rng, 2, 32).astype(np.float32), lam=0.1, train=True)
    assert out.fatigue_logits.shape == (2, 3)
    assert (out.domain_logits is None) == (variant == "ian")
    np.testing.assert_allclose(np.linalg.norm(out.embedding_normalized, axis=1)[
        np.linalg.norm(out.embedding, axis=1) > 0], 1, rtol=1e-5)


def test_float32_backward_stays_float32(rng):
    model = IADAN(n_domains=3)
    out = model.forward(_batch(rng, 6, 16).astype(np.float32), lam=0.1, train=True)
    y = np.array([0, 0, 1, 1, 2, 2])
    loss = total_loss(out.fatigue_logits, out.domain_logits, out.embedding, y, y)
    assert all(g.dtype == np.float32 for g in loss.grads.values())
    dx = model.backward(loss.grads["embedding"], loss.grads["fatigue"], loss.grads["domain"],
                        input_grad=True)
    assert dx.dtype == np.float32


def test_wrong_input_shape_raises():
    model = IADAN()
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 5, 64, 64)))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 6, 30, 30)))


def test_residual_unit_with_zero_body_is_identity(rng):
    unit = ResidualUnit(64, rng, dtype=np.float64)
    for _, p, _ in unit.inception.named_parameters():
        p[...] = 0
    unit.set_mode(False)
    x = rng.standard_normal((2, 64, 8, 8))
    np.testing.assert_array_equal(unit.forward(x), x)


def test_eval_mode_is_deterministic(rng, small_model):
    x = _batch(rng)
    a = small_model.forward(x, train=False).fatigue_logits
    b = small_model.forward(x, train=False).fatigue_logits
    np.testing.assert_array_equal(a, b)


def test_total_loss_weighting(rng):
    emb = rng.standard_normal((6, 8))
    fl, dl = rng.standard_normal((6, 3)), rng.standard_normal((6, 4))
    y, d = np.array([0, 1, 2, 0, 1, 2]), np.array([0, 1, 2, 3, 0, 1])
    full = total_loss(fl, dl, emb, y, d, LossWeights(0.5, 0.8))
    assert full.total == pytest.approx(full.fatigue + 0.5 * full.supcon + 0.8 * full.domain)
    only_f = total_loss(fl, dl, emb, y, d, LossWeights(0.0, 0.0))
    assert only_f.total == pytest.approx(full.fatigue)
    assert only_f.grads["embedding"] is None and only_f.grads["domain"] is None


def test_domain_gradient_is_reversed(rng, small_model):
    """The feature extractor sees -lam times the domain-head gradient."""
    m = small_model
    x = _batch(rng)
    d_dom = rng.standard_normal((4, 4))

    def extractor_grads(lam):
        m.zero_grad()
        m.forward(x, lam=lam, train=False)
        m.backward(d_domain=d_dom)
        grads = {n: g.copy() for n, _, g in m.named_parameters()}
        return grads

    g0, g1, g2 = extractor_grads(0.0), extractor_grads(0.1), extractor_grads(0.2)
    # plain (un-reversed) chain rule through the extractor
    m.zero_grad()
    m.forward(x, train=False)
    m.features_backward(m.domain_head.backward(d_dom))
    plain = {n: g.copy() for n, _, g in m.named_parameters()}

    name = "dilated_conv1.weight"
    assert not g0[name].any()
    assert g0["domain_head.linear2.weight"].any()
    np.testing.assert_allclose(g1[name], -0.1 * plain[name], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(g2[name], 2 * g1[name], rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(g1["domain_head.linear2.weight"],
                                  g2["domain_head.linear2.weight"])


def test_input_gradient_matches_finite_differences(rng):
    # the domain term is reversed on purpose, so the input check leaves it out
    model = IADAN(n_domains=3, seed=1, dtype=np.float64, dropout=0.0)
    x = _batch(rng, 3, 8)
    labels = np.array([0, 1, 0])
    w = LossWeights(beta=0.0)

    def loss():
        out = model.forward(x, train=False)
        return total_loss(out.fatigue_logits, None, out.embedding, labels, None, w)

    lc = loss()
    model.zero_grad()
    dx = model.backward(lc.grads["embedding"], lc.grads["fatigue"], input_grad=True)
    assert grad_check(lambda: loss().total, [x], [dx], max_coords=30) < 1e-3


def test_checkpoint_round_trip(tmp_path, rng):
    model = IADAN(n_domains=4, seed=7)
    model.forward(_batch(rng, 4, 16).astype(np.float32), train=True)  # move BN buffers
    save_checkpoint(model, tmp_path / "ck", extra={"epoch": 3})
    loaded, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["extra"] == {"epoch": 3}
    assert manifest["model"]["n_domains"] == 4
    for name, arr in model.state().items():
        np.testing.assert_array_equal(loaded.state()[name], arr)
    x = _batch(rng, 2, 16).astype(np.float32)
    np.testing.assert_array_equal(model.forward(x).fatigue_logits,
                                  loaded.forward(x).fatigue_logits)


def test_checkpoint_layout(tmp_path):
    model = IADAN(n_domains=2, variant="ian")
    save_checkpoint(model, tmp_path / "m")
    manifest = json.loads((tmp_path / "m.json").read_text())
    total = sum(int(np.prod(t["shape"])) * 4 for t in manifest["tensors"])
    assert (tmp_path / "m.bin").stat().st_size == total
    offsets = [t["offset"] for t in manifest["tensors"]]
    assert offsets == sorted(offsets) and offsets[0] == 0


def test_load_state_rejects_missing(tmp_path):
    model = IADAN(n_domains=2)
    state = model.state()
    state.pop("fc.weight")
    with pytest.raises(InvalidConfigError):
        IADAN(n_domains=2).load_state(state)
