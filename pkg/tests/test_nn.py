"""Forward/backward correctness, Adam, gradient checks, and checkpoints."""

import math

import numpy as np
import pytest

from treegrid import nn
from treegrid.data import build_profile
from treegrid.projection import project
from treegrid.trees import bfs_tree

from conftest import make_graph
from reference_forward import reference_grid_forward


def zeroed(model):
    for arr in model.params.values():
        arr[...] = 0.0
    return model


def random_instance(variant, seed, h=4, w=5, c=7, classes=3, **kwargs):
    rng = np.random.default_rng(seed)
    model = nn.build_model(variant, c, classes, seed=seed, **kwargs)
    image = rng.standard_normal((h, w, c))
    label = int(rng.integers(classes))
    return model, image, label


def test_zero_model_zero_image_gives_uniform_probabilities():
    for variant in nn.VARIANTS:
        model = zeroed(nn.build_model(variant, 5, 4, seed=0))
        probs, _ = nn.forward(model, np.zeros((3, 4, 5)))
        assert np.allclose(probs, 0.25, atol=1e-12)


def test_probabilities_normalized_for_random_inputs():
    for variant in nn.VARIANTS:
        for seed in range(5):
            model, image, _ = random_instance(variant, seed)
            probs, _ = nn.forward(model, image)
            assert abs(probs.sum() - 1.0) < 1e-6
            assert ((probs > 0) & (probs < 1)).all()


def test_forward_matches_straight_line_reference():
    for seed in range(5):
        model, image, _ = random_instance("grid_rnn", seed, h=4, w=5, c=11, classes=2)
        probs, _ = nn.forward(model, image)
        ref = reference_grid_forward(model, image)
        assert np.max(np.abs(probs - np.array(ref))) < 1e-10


def test_forward_matches_reference_single_row_and_pool_all():
    model, image, _ = random_instance("grid_rnn", 3, h=1, w=6, c=7)
    probs, _ = nn.forward(model, image)
    assert np.max(np.abs(probs - reference_grid_forward(model, image))) < 1e-10

    model, image, _ = random_instance("grid_rnn", 4, h=5, w=4, c=7,
                                      pool_all_steps=True)
    probs, _ = nn.forward(model, image)
    ref = reference_grid_forward(model, image, pool_all=True)
    assert np.max(np.abs(probs - np.array(ref))) < 1e-10


def test_loss_of_certain_prediction_is_zero():
    assert nn.cross_entropy(np.array([[0.0, 1.0]]), np.array([1])) == 0.0


def test_zero_model_two_classes_loss_is_ln2():
    model = zeroed(nn.build_model("grid_rnn", 3, 2, seed=0))
    loss, _ = nn.loss_and_backward(model, np.zeros((2, 3, 3)), 0)
    assert abs(loss - math.log(2.0)) < 1e-12


def test_gradcheck_full_sweep_main_variant():
    # every parameter entry of a seeded 4x5x11 instance at the coarse step
    model, image, label = random_instance("grid_rnn", 1, c=11, classes=2)
    report = nn.grad_check(model, image, label, eps=1e-4)
    assert report.entries_checked == nn.parameter_count(model)
    assert report.max_rel_err < 1e-4, report.per_block


def test_gradcheck_coarse_step_failures_are_kinks_not_bugs():
    # at eps=1e-4 this instance straddles a relu/pool kink; at 1e-6 the same
    # entries match, so the analytic gradient is exact
    model, image, label = random_instance("grid_rnn", 0, c=11, classes=2)
    coarse = nn.grad_check(model, image, label, eps=1e-4)
    fine = nn.grad_check(model, image, label, eps=1e-6)
    assert coarse.max_rel_err > 1e-4
    assert fine.max_rel_err < 1e-6


def test_gradcheck_near_quadratic_head_on_single_pixel():
    model, image, label = random_instance("mlp", 2, h=1, w=1, c=6)
    # keep every relu unit at least 10*eps away from its kink
    pre = image.reshape(-1) @ model.params["mlp_w"] + model.params["mlp_b"]
    assert np.abs(pre).min() > 1e-3
    report = nn.grad_check(model, image, label, eps=1e-4)
    assert report.per_block["head_w"] < 1e-8
    assert report.per_block["head_b"] < 1e-8
    assert report.max_rel_err < 1e-6


def test_gradcheck_rejects_zero_eps_and_float32():
    model, image, label = random_instance("mlp", 0)
    with pytest.raises(ValueError, match="eps"):
        nn.grad_check(model, image, label, eps=0.0)
    model32 = nn.build_model("mlp", 7, 3, seed=0, dtype=np.float32)
    with pytest.raises(ValueError, match="float64"):
        nn.grad_check(model32, image, label)


def test_adam_zero_gradient_leaves_parameters_unchanged():
    model = nn.build_model("grid_rnn", 5, 2, seed=1)
    before = {k: v.copy() for k, v in model.params.items()}
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    nn.adam_step(model, grads, nn.adam_init(model))
    for k in before:
        assert np.array_equal(model.params[k], before[k])


def test_adam_first_step_magnitude():
    # bias corrections cancel at t=1, so the update is lr * g/(|g| + eps)
    model = nn.build_model("mlp", 2, 2, seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    grads = {k: np.ones_like(v) for k, v in model.params.items()}
    nn.adam_step(model, grads, nn.adam_init(model), lr=1e-4)
    for k in before:
        step = before[k] - model.params[k]
        assert np.allclose(step, 1e-4, rtol=1e-6)


def test_adam_constant_gradient_decreases_twice():
    model = nn.build_model("mlp", 2, 2, seed=0)
    state = nn.adam_init(model)
    grads = {k: np.ones_like(v) for k, v in model.params.items()}
    p0 = model.params["head_b"].copy()
    nn.adam_step(model, grads, state)
    p1 = model.params["head_b"].copy()
    nn.adam_step(model, grads, state)
    p2 = model.params["head_b"].copy()
    assert (p1 < p0).all() and (p2 < p1).all()


def test_parameter_counts():
    model = nn.build_model("grid_rnn", 11, 2, seed=0)
    assert nn.parameter_count(model) == 768 + 12352 + 130 == 13250
    mlp = nn.build_model("mlp", 11, 2, seed=0)
    assert nn.parameter_count(mlp) < nn.parameter_count(model)
    assert nn.parameter_count(nn.build_model("conv2d", 11, 2, seed=0)) == 37826
    assert nn.parameter_count(nn.build_model("flat_rnn", 11, 2, seed=0)) == 9154


def test_build_model_deterministic_and_validates():
    a = nn.build_model("grid_rnn", 7, 3, seed=42)
    b = nn.build_model("grid_rnn", 7, 3, seed=42)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    with pytest.raises(ValueError, match="unknown variant"):
        nn.build_model("d_rnn", 7, 3, seed=0)


def test_sibling_order_changes_output():
    g = make_graph(5, [(0, 1), (0, 2), (1, 3), (1, 4)],
                   node_labels=[0, 1, 2, 3, 4])
    t = bfs_tree(g, 0)
    profile = build_profile([g])
    profile.max_tree_depth = t.depth
    canonical = project(t, g, profile)
    shuffled = None
    for seed in range(16):
        candidate = project(t, g, profile, rng=np.random.default_rng(seed))
        if not np.array_equal(candidate.pixels, canonical.pixels):
            shuffled = candidate
            break
    assert shuffled is not None
    model = nn.build_model("grid_rnn", profile.channels, 2, seed=0)
    p1, _ = nn.forward(model, canonical)
    p2, _ = nn.forward(model, shuffled)
    assert not np.allclose(p1, p2)


def test_loss_decreases_over_50_steps_every_variant():
    rng = np.random.default_rng(0)
    images = rng.standard_normal((8, 4, 5, 7))
    labels = rng.integers(0, 3, size=8)
    for variant in nn.VARIANTS:
        model = nn.build_model(variant, 7, 3, seed=1)
        state = nn.adam_init(model)
        first, _ = nn.loss_and_backward_batch(model, images, labels)
        loss = first
        for _ in range(50):
            loss, grads = nn.loss_and_backward_batch(model, images, labels)
            nn.adam_step(model, grads, state, lr=1e-4)
        assert loss < first, variant


def test_forward_is_deterministic():
    model, image, _ = random_instance("grid_rnn", 9)
    p1, _ = nn.forward(model, image)
    p2, _ = nn.forward(model, image)
    assert np.array_equal(p1, p2)


def test_input_validation():
    model = nn.build_model("grid_rnn", 7, 3, seed=0)
    bad = np.zeros((4, 5, 7))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        nn.forward(model, bad)
    with pytest.raises(ValueError, match="channels"):
        nn.forward(model, np.zeros((4, 5, 6)))
    with pytest.raises(ValueError, match="label"):
        nn.loss_and_backward(model, np.zeros((4, 5, 7)), 3)


def test_batch_gradients_equal_mean_of_singles():
    model, _, _ = random_instance("grid_rnn", 5)
    rng = np.random.default_rng(5)
    images = rng.standard_normal((3, 4, 5, 7))
    labels = np.array([0, 2, 1])
    loss_b, grads_b = nn.loss_and_backward_batch(model, images, labels)
    singles = [nn.loss_and_backward(model, images[i], int(labels[i])) for i in range(3)]
    assert abs(loss_b - np.mean([s[0] for s in singles])) < 1e-12
    for k in grads_b:
        mean_grad = np.mean([s[1][k] for s in singles], axis=0)
        assert np.allclose(grads_b[k], mean_grad, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    model, image, _ = random_instance("conv2d", 6)
    path = str(tmp_path / "model.tgm")
    nn.save_model(model, path)
    back = nn.load_model(path)
    assert back.variant == model.variant
    assert back.seed == model.seed
    assert back.class_count == model.class_count
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k])
    p1, _ = nn.forward(model, image)
    p2, _ = nn.forward(back, image)
    assert np.array_equal(p1, p2)
    blob = bytearray(open(path, "rb").read())
    blob[0] = 0
    open(path, "wb").write(bytes(blob))
    with pytest.raises(ValueError, match="magic"):
        nn.load_model(path)
