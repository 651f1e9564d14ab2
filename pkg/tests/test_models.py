import math

import numpy as np
import pytest

from driveflow.autograd import Tape, backward, ops
from driveflow.errors import ConfigError, DimensionError
from driveflow.models import (
    BackboneSpec, FusionSpec, ModelInputs, PointNetSpec, build_io_model, build_pcm_model, build_pn_model,
    forward, model_from_spec,
)

SMALL = BackboneSpec("tinyconv", (3, 16, 24), (4, 6), (8,))
DEPTH = BackboneSpec("tinyconv", (2, 12, 24), (3, 5), ())
PN = PointNetSpec((8, 16), num_points=32)
FUSE = FusionSpec(12)


def _batch(seed, b=3, n=20):
    rng = np.random.default_rng(seed)
    return ModelInputs(rng.uniform(0, 1, (b,) + SMALL.input_shape), rng.uniform(0, 1, (b,) + DEPTH.input_shape),
                       rng.normal(size=(b, n, 3)))


def _models(seed=0):
    return [build_io_model(SMALL, seed), build_pcm_model(SMALL, DEPTH, FUSE, seed), build_pn_model(SMALL, PN, FUSE, seed)]


def test_nvidia_parameter_count_from_layer_table():
    convs = [(3, 24, 5), (24, 36, 5), (36, 48, 5), (48, 64, 3), (64, 64, 3)]
    n = sum(cin * cout * k * k + cout for cin, cout, k in convs)
    # 66x200 -> 31x98 -> 14x47 -> 5x22 -> 3x20 -> 1x18
    flat = 64 * 1 * 18
    fcs = [(flat, 100), (100, 50), (50, 10), (10, 2)]
    n += sum(a * b + b for a, b in fcs)
    assert n == 252230
    model = build_io_model(BackboneSpec.nvidia(), 0)
    assert model.parameter_count() == n
    out = model(ModelInputs(np.zeros((1, 3, 66, 200)))).data
    assert out.shape == (1, 2) and np.all(np.isfinite(out))


def test_nvidia_requires_its_input_shape():
    with pytest.raises(ConfigError):
        build_io_model(BackboneSpec("nvidia", (3, 64, 200), (24, 36, 48, 64, 64), ()), 0)


@pytest.mark.parametrize("bad", [
    BackboneSpec("resnet"), BackboneSpec("tinyconv", (3, 8, 8), (4, 4, 4)), BackboneSpec(conv_widths=(0,)),
])
def test_invalid_backbone_specs(bad):
    with pytest.raises(ConfigError):
        build_io_model(bad, 0)


def test_pcm_requires_two_channel_depth():
    with pytest.raises(ConfigError):
        build_pcm_model(SMALL, BackboneSpec("tinyconv", (1, 8, 24), (3,), ()), FUSE, 0)
    with pytest.raises(ConfigError):
        build_pn_model(SMALL, PointNetSpec((0,)), FUSE, 0)


def test_seeded_init_is_bitwise_identical():
    for a, b in zip(_models(5), _models(5)):
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    assert not np.array_equal(_models(5)[0].parameters()[0].data, _models(6)[0].parameters()[0].data)


def test_outputs_finite_and_speed_in_unit_interval():
    for model in _models():
        for batch in (_batch(1), ModelInputs(np.zeros((2,) + SMALL.input_shape), np.zeros((2,) + DEPTH.input_shape),
                                             np.zeros((2, 5, 3)))):
            preds = forward(model, batch)
            assert all(math.isfinite(p.angle) and 0 <= p.speed <= 1 for p in preds)
            assert preds == forward(model, batch)


def test_fused_widths():
    pcm = build_pcm_model(SMALL, DEPTH, FUSE, 0)
    assert pcm.fused_width == SMALL.feature_dim + DEPTH.feature_dim
    pn = build_pn_model(SMALL, PointNetSpec(), FUSE, 0)
    assert pn.fused_width == SMALL.feature_dim + 1024


def test_zeroed_depth_branch_ignores_depth_map():
    model = build_pcm_model(SMALL, DEPTH, FUSE, 2)
    for name, p in model.named_parameters():
        if name.startswith("depth."):
            p.data[...] = 0.0
    a, b = _batch(3), _batch(4)
    b.image = a.image
    assert np.array_equal(model(a).data, model(b).data)


@pytest.mark.parametrize("kind", ["pcm", "pn"])
def test_gradients_reach_both_branches(kind):
    model = {m.kind: m for m in _models(3)}[kind]
    with Tape() as tape:
        loss = ops.sum(ops.square(model(_batch(8))))
    backward(loss, tape)
    branch = "depth." if kind == "pcm" else "pointnet."
    grads = dict((n, p.grad) for n, p in model.named_parameters())
    assert any(np.any(g) for n, g in grads.items() if n.startswith("image."))
    assert any(np.any(g) for n, g in grads.items() if n.startswith(branch))
    assert all(g is not None for g in grads.values())


def test_pn_permutation_and_duplicate_invariance():
    model = build_pn_model(SMALL, PN, FUSE, 1)
    rng = np.random.default_rng(0)
    batch = _batch(2, b=1, n=30)
    ref = model(batch).data
    for _ in range(20):
        perm = batch.points[:, rng.permutation(30)]
        assert np.array_equal(model(ModelInputs(batch.image, points=perm)).data, ref)
    dup = np.concatenate([batch.points, batch.points[:, [7]]], axis=1)
    assert np.array_equal(model(ModelInputs(batch.image, points=dup)).data, ref)


def test_repeated_point_equals_single_point():
    model = build_pn_model(SMALL, PN, FUSE, 1)
    image = _batch(2, b=1).image
    p = np.array([[[0.3, -0.2, 0.5]]])
    one = model(ModelInputs(image, points=p)).data
    many = model(ModelInputs(image, points=np.repeat(p, 9, axis=1))).data
    assert np.array_equal(one, many)


def test_hand_built_single_layer_forward():
    spec = BackboneSpec("tinyconv", (3, 4, 4), (1,), ())
    model = build_io_model(spec, 0)
    assert spec.feature_dim == 1
    conv = model.backbone.convs[0]
    conv.kernels.data[...] = 0.0
    conv.kernels.data[0, 0] = np.eye(3) / 3  # mean of the red diagonal
    conv.bias.data[...] = 0.1
    model.out.weight.data[...] = [[2.0, -1.0]]
    model.out.bias.data[...] = [0.5, 0.25]
    img = np.zeros((3, 4, 4))
    img[0] = np.arange(16).reshape(4, 4) / 16
    # conv output (2x2): mean of diag of each 3x3 window + 0.1, then 2x2 max pool
    windows = [img[0, i:i + 3, j:j + 3].trace() / 3 + 0.1 for i in range(2) for j in range(2)]
    f = max(0.0, max(windows))
    p, = model.predict(ModelInputs(img))
    assert p.angle == pytest.approx(2 * f + 0.5, abs=1e-15)
    assert p.speed == pytest.approx(1 / (1 + math.exp(-(-f + 0.25))), abs=1e-15)


def test_shape_mismatch_is_dimension_error():
    io, pcm, pn = _models()
    with pytest.raises(DimensionError, match="expected"):
        io(ModelInputs(np.zeros((1, 3, 10, 24))))
    with pytest.raises(DimensionError):
        pcm(ModelInputs(np.zeros((1,) + SMALL.input_shape)))
    with pytest.raises(DimensionError):
        pn(ModelInputs(np.zeros((1,) + SMALL.input_shape), points=np.zeros((1, 4, 2))))


def test_spec_round_trip_rebuilds_same_init():
    for model in _models(9):
        clone = model_from_spec(model.spec_dict())
        assert clone.kind == model.kind
        assert all(np.array_equal(a.data, b.data) for a, b in zip(model.parameters(), clone.parameters()))
    with pytest.raises(ConfigError):
        model_from_spec({"kind": "lstm"})
