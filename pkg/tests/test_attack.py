import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtl import attack, hybrid
from qtl.attack import AttackConfig, RobustnessReport, RobustnessRow, fgsm, project_linf
from qtl.classical import ConstThenLinear
from qtl.data import DataError, Dataset, SyntheticSpec, gen_synthetic
from qtl.hybrid import Mode, TrainConfig
from qtl.rng import Rng

from test_hybrid import small_model


def _ds(n=48, seed=2):
    return gen_synthetic(SyntheticSpec(n_samples=n, dim=5, n_classes=3, class_separation=2,
                                       seed=seed))


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(-0.1)
    with pytest.raises(ValueError):
        AttackConfig(0.1, (1.0, 0.0))


def test_zero_epsilon_identity():
    m = small_model(Mode.QUANTUM_TL)
    x = Rng(0).normal_array((4, 5))
    out = fgsm(m, x, [0, 1, 2, 0], AttackConfig(0.0))
    assert np.array_equal(out, x) and out is not x


def test_zero_gradient_no_move():
    m = small_model(Mode.QUANTUM_NO_TL)
    m.reducer.weights[:] = 0
    x = Rng(0).normal_array((4, 5))
    assert np.array_equal(fgsm(m, x, [0, 1, 2, 0], AttackConfig(0.3)), x)
    ds = _ds()
    assert attack.attacked_accuracy(m, ds, AttackConfig(0.3)) == hybrid.evaluate(m, ds)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), eps=st.floats(1e-9, 10.0), scale=st.floats(1e-3, 1e6))
def test_projection_budget_exact(seed, eps, scale):
    r = Rng(seed)
    x = r.normal_array((20,), std=scale)
    x_adv = x + r.uniform_array((20,), -3 * eps, 3 * eps)
    out = project_linf(x, x_adv, eps)
    assert np.max(np.abs(out - x)) <= eps


@pytest.mark.parametrize("mode", list(Mode))
def test_fgsm_budget_and_sign(mode):
    m = small_model(mode)
    r = Rng(11)
    x = r.normal_array((10, 5), std=30.0)
    y = np.arange(10) % 3
    for eps in (1e-3, 0.1, 0.37):
        out = fgsm(m, x, y, AttackConfig(eps))
        assert np.max(np.abs(out - x)) <= eps
        g = hybrid.input_gradient(m, x, y)
        moved = out != x
        assert np.array_equal(np.sign(out - x)[moved], np.sign(g)[moved])


def test_clamp_respected():
    m = small_model(Mode.CLASSICAL_NO_TL)
    x = Rng(3).uniform_array((8, 5), 0.0, 1.0)
    out = fgsm(m, x, np.zeros(8, dtype=int), AttackConfig(0.5, (0.0, 1.0)))
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.max(np.abs(out - x)) <= 0.5


def test_loss_non_decrease_small_eps():
    ds = _ds(96)
    m = small_model(Mode.QUANTUM_TL)
    m.classifier = type(m.classifier).init(Rng(3), 2, 3)
    hybrid.train(m, ds, TrainConfig(epochs=3, learning_rate=0.01, schedule=ConstThenLinear(3, 1)))
    checked = 0
    for i in range(len(ds)):
        x, y = ds.features[i:i + 1], ds.labels[i:i + 1]
        if np.abs(hybrid.input_gradient(m, x, y)).max() <= 1e-6:
            continue
        x_adv = fgsm(m, x, y, AttackConfig(1e-4))
        assert hybrid.loss(m, x_adv, y) >= hybrid.loss(m, x, y)
        checked += 1
    assert checked > 50


def test_attacked_accuracy_zero_eps_matches_clean():
    m = small_model(Mode.QUANTUM_NO_TL)
    ds = _ds()
    assert attack.attacked_accuracy(m, ds, AttackConfig(0.0)) == hybrid.evaluate(m, ds)
    with pytest.raises(DataError):
        attack.attacked_accuracy(m, ds.subset([]), AttackConfig(0.1))


def _tiny_cfg(seed=0):
    return TrainConfig(epochs=2, batch_size=8, learning_rate=0.01, schedule=ConstThenLinear(2, 1),
                       seed=seed)


@pytest.mark.parametrize("mode", [Mode.QUANTUM_NO_TL, Mode.CLASSICAL_TL])
def test_zero_eps_adversarial_training_equals_duplicated_data(mode, caplog):
    ds = _ds(40)
    a, b = small_model(mode), small_model(mode)
    with caplog.at_level(logging.WARNING):
        _, ha = attack.adversarial_train(a, ds, AttackConfig(0.0), _tiny_cfg(), test_set=ds)
    assert any("epsilon = 0" in r.message for r in caplog.records)
    _, hb = hybrid.train(b, ds, _tiny_cfg(), test_set=ds, augment=attack.duplicate_augment)
    assert ha == hb
    for (_, pa, _), (_, pb, _) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa, pb)


def test_adversarial_augment_mixes_half_and_half():
    m = small_model(Mode.QUANTUM_NO_TL)
    x = Rng(1).normal_array((4, 5))
    y = np.array([0, 1, 2, 0])
    xa, ya = attack.adversarial_augment(AttackConfig(0.2))(m, x, y)
    assert xa.shape == (8, 5) and np.array_equal(xa[:4], x)
    assert np.array_equal(ya, np.concatenate([y, y]))
    assert np.max(np.abs(xa[4:] - x)) <= 0.2


def test_adversarial_train_empty():
    with pytest.raises(DataError):
        attack.adversarial_train(small_model(Mode.QUANTUM_NO_TL), _ds().subset([]),
                                 AttackConfig(0.1), _tiny_cfg())


def test_report_csv_round_trip(tmp_path):
    rep = RobustnessReport([RobustnessRow(0.1, 0.9, 0.5, 0.7), RobustnessRow(0.2, 0.9, 0.45, 0.6)])
    text = rep.to_csv()
    lines = text.splitlines()
    assert lines[0] == "epsilon,clean_acc,attack_acc,adv_train_acc"
    assert lines[1] == "0.100000,0.900000,0.500000,0.700000"
    back = RobustnessReport.from_csv(text)
    assert np.array_equal(back.column("attack_acc"), rep.column("attack_acc"))
    rep.save(tmp_path / "r.csv")
    assert RobustnessReport.load(tmp_path / "r.csv").to_csv() == text


def test_report_validation():
    with pytest.raises(ValueError):
        RobustnessReport([RobustnessRow(0.2, 1, 1, 1), RobustnessRow(0.1, 1, 1, 1)]).validate()
    with pytest.raises(ValueError):
        RobustnessReport([RobustnessRow(0.1, 1.2, 1, 1)]).validate()
    with pytest.raises(ValueError):
        RobustnessReport.from_csv("eps,clean\n0.1,0.2\n")


def test_sweep_zero_eps_and_deterministic():
    ds = _ds(40)
    te = _ds(30, seed=9)
    fac = lambda: small_model(Mode.QUANTUM_NO_TL)
    rep = attack.robustness_sweep(fac, ds, te, [0.0], _tiny_cfg())
    assert rep.rows[0].attack_acc == rep.rows[0].clean_acc
    a = attack.robustness_sweep(fac, ds, te, [0.1, 0.2], _tiny_cfg()).to_csv()
    b = attack.robustness_sweep(fac, ds, te, [0.2, 0.1], _tiny_cfg()).to_csv()
    assert a == b and len(a.splitlines()) == 3
    with pytest.raises(ValueError):
        attack.robustness_sweep(fac, ds, te, [], _tiny_cfg())
    with pytest.raises(ValueError):
        attack.robustness_sweep(fac, ds, te, [-0.1], _tiny_cfg())


def test_reference_table_is_only_metadata():
    ref = attack.REFERENCE_QTL_FIGURES
    assert sorted(ref) == [0.1, 0.2, 0.3]
    assert all(r["adv_train_acc"] > r["attack_acc"] for r in ref.values())
