import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driveflow.autograd import Tape, Tensor, backward
from driveflow.errors import (
    CheckpointError, CheckpointShapeError, CheckpointTruncatedError, CheckpointVersionError, ConfigError,
    ContractError, TrainingError,
)
from driveflow.training import (
    ANGLE_TOLERANCE, Checkpoint, SplitData, TrainConfig, dataset_rmsd, is_better_checkpoint, load_checkpoint,
    predict_array, qualifies, rmsd_loss, save_checkpoint, split_indices, train, write_history_csv,
)
from conftest import tiny_model

CFG = TrainConfig()


# --- loss ----------------------------------------------------------------------

def test_rmsd_zero_and_hand_example():
    truth = np.array([[0.1, 0.5]])
    assert float(rmsd_loss(Tensor(truth), truth).data) == 0.0
    loss = float(rmsd_loss(Tensor([[0.4, 0.9]]), truth).data)
    assert loss == pytest.approx(math.sqrt((0.09 + 0.16) / 2), abs=1e-12)
    assert round(loss, 4) == 0.3536


def test_rmsd_angle_scale_divides_angle_error():
    loss = float(rmsd_loss(Tensor([[0.2, 0.0]]), [[0.0, 0.0]], angle_scale=0.5).data)
    assert loss == pytest.approx(math.sqrt(0.4 ** 2 / 2), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), b=st.integers(1, 8), c=st.floats(0.1, 10))
def test_rmsd_positive_homogeneity(seed, b, c):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(b, 2))
    err = rng.normal(size=(b, 2))
    base = float(rmsd_loss(Tensor(truth + err), truth).data)
    scaled = float(rmsd_loss(Tensor(truth + c * err), truth).data)
    assert scaled == pytest.approx(c * base, rel=1e-9)


def test_rmsd_errors_and_gradient():
    with pytest.raises(ContractError):
        rmsd_loss(Tensor(np.zeros((0, 2))), np.zeros((0, 2)))
    with pytest.raises(ContractError):
        rmsd_loss(Tensor(np.zeros((2, 2))), np.zeros((3, 2)))
    p = Tensor([[0.0, 0.0]], requires_grad=True)
    with Tape() as tape:
        loss = rmsd_loss(p, [[3.0, 4.0]])
    backward(loss, tape)
    # d/dp sqrt(((p-t)^2).mean()) = (p - t) / (n * loss)
    assert np.allclose(p.grad, np.array([[-3.0, -4.0]]) / (2 * math.sqrt(12.5)), rtol=1e-14)


# --- checkpoint rule ---------------------------------------------------------------

def test_rule_examples():
    assert is_better_checkpoint((0.05, 0.20), None, CFG)
    assert not qualifies((0.09, 0.10), CFG)
    assert is_better_checkpoint((0.05, 0.20), (0.04, 0.22), CFG)
    assert not is_better_checkpoint((0.04, 0.22), (0.05, 0.20), CFG)


def _oracle(cand, inc, a_tol, s_tol):
    """Rule restated independently: (qualified, -sum) ordering, incumbent keeps ties."""
    if inc is None:
        return True
    q = lambda m: m[0] < a_tol and m[1] < s_tol  # noqa: E731
    if q(cand) != q(inc):
        return q(cand)
    if not q(cand):
        return False
    return sum(cand) < sum(inc)


def _boundary_values(tol):
    return [0.0, tol / 2, np.nextafter(tol, 0), tol, np.nextafter(tol, 1), tol * 1.5]


def test_rule_exhaustive_boundary_table():
    a_vals = _boundary_values(ANGLE_TOLERANCE) + [0.087]
    s_vals = _boundary_values(0.25)
    maes = list(itertools.product(a_vals, s_vals))
    for cand in maes:
        assert is_better_checkpoint(cand, None, CFG)
        for inc in maes:
            assert is_better_checkpoint(cand, inc, CFG) == _oracle(cand, inc, ANGLE_TOLERANCE, 0.25), (cand, inc)


def test_rule_strictness_and_tie():
    assert qualifies((np.nextafter(ANGLE_TOLERANCE, 0), 0.0), CFG)
    assert not qualifies((ANGLE_TOLERANCE, 0.0), CFG)
    assert not qualifies((0.0, 0.25), CFG)
    assert not is_better_checkpoint((0.01, 0.02), (0.02, 0.01), CFG)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 0.2), st.floats(0, 0.5)), min_size=1, max_size=12))
def test_rule_sequence_best_is_order_free_among_qualifiers(seq):
    best = None
    for m in seq:
        if is_better_checkpoint(m, best, CFG):
            best = m
    again = None
    for m in seq:
        if is_better_checkpoint(m, again, CFG):
            again = m
    assert best == again
    quals = [m for m in seq if qualifies(m, CFG)]
    if quals:
        assert qualifies(best, CFG) and sum(best) == min(sum(m) for m in quals)
    else:
        assert best == seq[0]


# --- config -----------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0), dict(lr=-1), dict(speed_tolerance=0),
                                dict(split_fractions=(0.5, 0.2, 0.2))])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()


def test_split_indices_partition():
    tr, va, te = split_indices(20, (0.8, 0.1, 0.1), 4)
    assert (len(tr), len(va), len(te)) == (16, 2, 2)
    assert sorted(np.concatenate([tr, va, te])) == list(range(20))
    assert np.array_equal(split_indices(20, (0.8, 0.1, 0.1), 4)[0], tr)


# --- checkpoint files ----------------------------------------------------------------

@pytest.mark.parametrize("kind", ["io", "pcm", "pn"])
def test_checkpoint_round_trip_bitwise(kind, tiny_batch, tmp_path):
    model = tiny_model(kind, 4)
    inputs, _ = tiny_batch(model)
    ckpt = Checkpoint.from_model(model, 3, (0.05, 0.1), "abc", True, {"note": kind})
    path = tmp_path / f"{kind}.ckpt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.digest() == ckpt.digest() and back.epoch == 3 and back.qualified and back.extra == {"note": kind}
    assert predict_array(back.build_model(), inputs).tobytes() == predict_array(model, inputs).tobytes()


def test_checkpoint_errors(tmp_path):
    model = tiny_model("io")
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint.from_model(model), path)
    raw = path.read_bytes()

    for cut in (10, 40, len(raw) - 8):
        (tmp_path / "t.ckpt").write_bytes(raw[:cut])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "v.ckpt").write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "x.ckpt").write_bytes(raw + b"\0" * 8)
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(tmp_path / "x.ckpt")
    (tmp_path / "m2.ckpt").write_bytes(b"GARBAGE!" * 4)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m2.ckpt")

    ckpt = Checkpoint.from_model(model)
    name = next(iter(ckpt.params))
    ckpt.params[name] = np.zeros(3)
    save_checkpoint(ckpt, tmp_path / "s.ckpt")
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(tmp_path / "s.ckpt")


def test_checkpoint_error_types_are_distinct():
    kinds = {CheckpointTruncatedError, CheckpointVersionError, CheckpointShapeError}
    assert all(issubclass(k, CheckpointError) for k in kinds)
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)


# --- loop ---------------------------------------------------------------------------

def test_zero_learning_rate_keeps_parameters(tiny_batch):
    model = tiny_model("io")
    inputs, targets = tiny_batch(model)
    before = [p.data.copy() for p in model.parameters()]
    one = SplitData((inputs.subset([0]), targets[[0]]))
    result = train(model, one, TrainConfig(epochs=1, lr=0.0))
    assert len(result.history) == 1
    assert all(np.array_equal(a, p.data) for a, p in zip(before, model.parameters()))


@pytest.mark.parametrize("kind", ["io", "pcm", "pn"])
def test_training_is_bitwise_deterministic(kind, tiny_batch, tmp_path):
    runs = []
    for i in range(2):
        model = tiny_model(kind, 1)
        data = tiny_batch(model)
        result = train(model, SplitData(data), TrainConfig(epochs=2, batch_size=4, seed=5))
        write_history_csv(result.history, tmp_path / f"h{i}.csv")
        runs.append(((tmp_path / f"h{i}.csv").read_bytes(), result.best.digest()))
    assert runs[0] == runs[1]


def test_history_and_best_checkpoint_consistency(tiny_batch, tmp_path):
    model = tiny_model("io", 2)
    data = tiny_batch(model)
    result = train(model, SplitData(data, data), TrainConfig(epochs=3, batch_size=3))
    assert [r.epoch for r in result.history] == [1, 2, 3]
    best = None
    for r in result.history:
        if is_better_checkpoint((r.val_angle_mae, r.val_speed_mae), best, TrainConfig()):
            best, epoch = (r.val_angle_mae, r.val_speed_mae), r.epoch
    assert result.best.epoch == epoch
    write_history_csv(result.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_rmsd,val_angle_mae,val_speed_mae,qualified" and len(lines) == 4


def test_loss_decreases_on_small_overfit_task(tiny_batch):
    model = tiny_model("io", 0)
    inputs, targets = tiny_batch(model)
    result = train(model, SplitData((inputs, targets)), TrainConfig(epochs=50, batch_size=6, seed=0))
    assert result.history[49].train_rmsd < result.history[0].train_rmsd
    assert dataset_rmsd(model, inputs, targets, TrainConfig().angle_scale) < result.history[0].train_rmsd


def test_non_finite_loss_reports_diagnostics(tiny_batch):
    model = tiny_model("io")
    inputs, targets = tiny_batch(model)
    bad = targets.copy()
    bad[0, 0] = np.nan
    with pytest.raises(TrainingError, match=r"epoch 1, batch 0.*norms"):
        train(model, SplitData((inputs, bad)), TrainConfig(epochs=1, batch_size=16))


def test_max_steps_stops_early(tiny_batch):
    model = tiny_model("io")
    data = tiny_batch(model)
    result = train(model, SplitData(data), TrainConfig(epochs=10, batch_size=2), max_steps=4)
    assert len(result.history) == 2
