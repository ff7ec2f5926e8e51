import numpy as np
import pytest

from imsat import data, metrics, nn, trainer
from imsat.errors import ConfigError, ConstraintUnsatisfied, ShapeError
from imsat.trainer import TrainConfig

TOY = dict(hidden=(10, 10), weight_scales=(0.1, 0.1, 1.0))


def test_defaults():
    cfg = TrainConfig()
    assert cfg.hidden == (1200, 1200) and cfg.batch_size == 250 and cfg.epochs == 50
    assert cfg.step_size == 0.002 and cfg.lam == 0.1 and cfg.alpha == 0.25
    assert cfg.layer_dims(784) == [784, 1200, 1200, 10]
    assert TrainConfig(task="hash", n_out=16).hidden == (200, 200)
    assert cfg.delta == pytest.approx(0.01 * np.log(10))


def test_mu_schedule():
    assert trainer.default_mu_schedule(0.1, n=5) == pytest.approx((0.1, 0.2, 0.4, 0.6, 0.8))


@pytest.mark.parametrize("kwargs", [
    dict(task="rank"), dict(regularizer="dropout"), dict(n_out=1), dict(task="hash", n_out=0),
    dict(lam=0), dict(batch_size=0), dict(prior_q=(0.5, 0.5)), dict(mu_schedule=()),
    dict(mu_schedule=(-1.0,)),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_variants():
    assert trainer.config_for_variant("deep_rim").weight_decay_rate == 0.005
    assert trainer.config_for_variant("deep_rim").perturb_spec() is None
    assert trainer.config_for_variant("linear_rim").hidden == ()
    spec = trainer.config_for_variant("imsat_vat_affine", image_shape=(4, 4)).perturb_spec()
    assert [c.kind for c in spec.components] == ["vat", "affine"] and spec.weights == (0.5, 0.5)
    assert trainer.config_for_variant("imsat_vat").weight_decay_rate == 0.0
    with pytest.raises(ConfigError):
        trainer.config_for_variant("kmeans")


def test_encode_tie_rules():
    book = trainer.codebook_from_probs(np.array([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]), "cluster")
    assert list(book.assignments) == [1, 0]
    hb = trainer.codebook_from_probs(np.array([[0.9, 0.4, 0.5]]), "hash")
    assert hb.bits.tolist() == [[1, 0, 0]] and int(hb.assignments[0]) == 0b100
    with pytest.raises(ConfigError):
        trainer.codebook_from_probs(np.ones((1, 2)), "rank")


def test_encode_checks_dimension():
    m = nn.init_params([3, 2], seed=0)
    with pytest.raises(ShapeError):
        trainer.encode(m, np.zeros((2, 4)))


def test_training_input_checks():
    cfg = TrainConfig(n_out=2, batch_size=10, epochs=1, **TOY)
    with pytest.raises(ConfigError):
        trainer.train_clustering(np.zeros((5, 2)), cfg)
    bad = np.zeros((20, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ConfigError):
        trainer.train_clustering(bad, cfg)
    with pytest.raises(ConfigError):
        trainer.train_hashing(np.zeros((20, 2)), cfg)


def test_two_blobs_end_to_end():
    ds = data.gen_blobs(K=2, per_blob=200, seed=0)
    cfg = trainer.config_for_variant("imsat_vat", n_out=2, seed=0, **TOY)
    model, report = trainer.train_clustering(ds, cfg)
    assert report.final_kl <= report.delta
    assert metrics.clustering_accuracy(trainer.encode(model, ds), ds.labels)[0] == 1.0
    assert report.trials[-1]["satisfied"] and len(report.objective_trace) == 50
    assert report.final_cond_entropy < report.initial_cond_entropy


def test_training_is_reproducible():
    ds = data.gen_blobs(K=2, per_blob=50, seed=1)
    cfg = trainer.config_for_variant("imsat_rpt", n_out=2, epochs=3, batch_size=50, seed=7, **TOY)
    a, ra = trainer.train_clustering(ds, cfg)
    b, rb = trainer.train_clustering(ds, cfg)
    assert ra.objective_trace == rb.objective_trace
    assert all(np.array_equal(x.W, y.W) for x, y in zip(a.layers, b.layers))


def test_unsatisfiable_prior_raises_with_best_model():
    ds = data.gen_blobs(K=2, per_blob=50, seed=0)
    cfg = TrainConfig(n_out=2, prior_q=(0.99, 0.01), mu_schedule=(0.0, 0.1), epochs=2,
                      batch_size=50, regularizer="none", **TOY)
    with pytest.raises(ConstraintUnsatisfied) as info:
        trainer.train_clustering(ds, cfg)
    err = info.value
    assert err.model is not None and err.kl > cfg.delta
    assert [t["mu"] for t in err.report.trials] == [0.0, 0.1]
    assert err.kl == min(t["kl"] for t in err.report.trials)


def test_weight_decay_variant_runs():
    ds = data.gen_blobs(K=2, per_blob=50, seed=0)
    cfg = trainer.config_for_variant("deep_rim", n_out=2, epochs=2, batch_size=50, **TOY)
    try:
        _, report = trainer.train_clustering(ds, cfg)
    except ConstraintUnsatisfied as exc:
        report = exc.report
    assert report.loss_terms["sat"] == 0.0


def test_one_bit_splits_two_blobs():
    ds = data.gen_blobs(K=2, per_blob=200, seed=3)
    cfg = TrainConfig(task="hash", n_out=1, hidden=(20,), seed=0)
    model, report = trainer.train_hashing(ds, cfg)
    book = trainer.encode(model, ds)
    assert metrics.clustering_accuracy(book.bits[:, 0], ds.labels)[0] == 1.0
    assert report.loss_terms["pair_information"] == 0.0
    # SAT keeps the bit slightly soft, so the information stays a little under ln 2
    assert 0.75 * np.log(2) < report.loss_terms["bit_information"] <= np.log(2)


def test_four_blobs_get_distinct_codes():
    ds = data.gen_blobs(K=4, per_blob=200, seed=0)
    cfg = TrainConfig(task="hash", n_out=4, seed=0)
    model, _ = trainer.train_hashing(ds, cfg)
    codes = trainer.encode(model, ds).assignments
    majority = [np.bincount(codes[ds.labels == k].astype(int)).argmax() for k in range(4)]
    assert len(set(majority)) == 4


def test_composite_uses_image_shape_from_dataset():
    ds = data.gen_glyphs(copies=10, size=9, seed=0)
    cfg = trainer.config_for_variant("imsat_vat_affine", n_out=3, hidden=(20,), epochs=2, batch_size=30)
    try:
        model, _ = trainer.train_clustering(ds, cfg)
    except ConstraintUnsatisfied as exc:
        model = exc.model
    assert trainer.encode(model, ds).n == 30
