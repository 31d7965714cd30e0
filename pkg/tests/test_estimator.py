import numpy as np
import pytest

from tpmvcc.estimator import MultiViewCountingEstimator, NotFittedError


def make_estimator():
    return MultiViewCountingEstimator(epochs_stage1=4, epochs_stage2=4,
                                      epochs_stage3=1)


class TestParams:
    def test_get_params_round_trip(self):
        est = make_estimator()
        params = est.get_params()
        other = MultiViewCountingEstimator(**params)
        assert other.get_params() == params

    def test_set_params_returns_self(self):
        est = make_estimator()
        assert est.set_params(dilation=3) is est
        assert est.get_params()["dilation"] == 3

    def test_unknown_param_rejected(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            make_estimator().set_params(momentum=0.9)


class TestFitPredict:
    def test_predict_before_fit_raises(self, tiny_dataset):
        with pytest.raises(NotFittedError):
            make_estimator().predict(tiny_dataset)

    def test_fit_predict_score(self, tiny_dataset):
        est = make_estimator().fit(tiny_dataset)
        counts = est.predict(tiny_dataset, split="val")
        assert counts.shape == (len(tiny_dataset.val_ids),)
        assert np.isfinite(counts).all() and (counts >= 0).all()
        assert 0.0 <= est.score(tiny_dataset) <= 1.0
        assert len(est.reports_) == 3

    def test_accepts_directory_path(self, tiny_dataset):
        est = make_estimator()
        est.fit(str(tiny_dataset.root))
        assert est.model_ is not None

    def test_bad_input_type(self):
        with pytest.raises(TypeError, match="dataset"):
            make_estimator().fit(42)
