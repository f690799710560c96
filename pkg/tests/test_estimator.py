"""Estimator API: sklearn protocol conformance (get_params/clone), the
fit/predict/score loop, and the annotation-free fit contract."""

import numpy as np
import pytest
from sklearn.base import clone

from prgdistill.bundle import save_bundle
from prgdistill.errors import StateError, ValidationError
from prgdistill.estimator import PRGDistiller


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    from prgdistill.bundle import synth_bundle

    bundle = synth_bundle(c=3, p=2, d=8, m=10, n_per_class=20, noise=0.3, seed=5)
    est = PRGDistiller(epochs=5, batch_size=16, backbone_hidden=(16,),
                       feature_dim=12, seed=0)
    est.fit(bundle)
    return bundle, est


def test_get_params_round_trip():
    est = PRGDistiller(epochs=3, lambda_node=0.7)
    params = est.get_params()
    assert params["epochs"] == 3
    assert params["lambda_node"] == 0.7
    est2 = PRGDistiller(**params)
    assert est2.get_params() == params


def test_clone_keeps_hyperparameters_drops_state(fitted):
    _, est = fitted
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()
    assert not hasattr(cloned, "params_")


def test_fit_from_path(tmp_path, fitted):
    bundle, _ = fitted
    path = tmp_path / "bundle"
    save_bundle(bundle, path)
    est = PRGDistiller(epochs=1, batch_size=16, backbone_hidden=(8,), feature_dim=8)
    est.fit(str(path))
    assert est.n_features_in_ == bundle.manifest.input_dim


def test_fit_rejects_labels(fitted):
    bundle, _ = fitted
    with pytest.raises(ValidationError):
        PRGDistiller(epochs=1).fit(bundle, y=np.zeros(10))


def test_predict_shapes_and_proba(fitted):
    bundle, est = fitted
    X = bundle.inputs[:7]
    preds = est.predict(X)
    proba = est.predict_proba(X)
    assert preds.shape == (7,)
    assert proba.shape == (7, 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(preds, proba.argmax(axis=1))


def test_score_beats_chance_after_training(fitted):
    bundle, est = fitted
    idx = bundle.manifest.eval_indices
    acc = est.score(bundle.inputs[idx], bundle.labels_for_eval(idx))
    assert acc > 0.5


def test_teacher_agreement_metric(fitted):
    bundle, est = fitted
    agreement = est.teacher_agreement(bundle)
    assert 0.0 <= agreement <= 1.0


def test_unfitted_predict_raises():
    with pytest.raises(StateError):
        PRGDistiller().predict(np.zeros((2, 4)))
