import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dsanet import DSANetSegmenter, check_sequences
from dsanet.data import SyntheticSpec, generate_synthetic

SMALL = dict(num_tokens=2, num_blocks=1, hidden_dim=4, n_qubits=2, n_quantum_layers=1, ge_layers=1, epochs=2, lr=1e-3)


@pytest.fixture
def videos():
    spec = SyntheticSpec(num_classes=3, d_f=5, segments_per_video=4, min_duration=3, max_duration=4, noise_sigma=0.1, seed=3)
    vids = generate_synthetic(spec, 2)
    names = np.array(["cut", "pour", "stir"])
    return [v.features for v in vids], [names[v.labels] for v in vids]


class TestCheckSequences:
    def test_single_matrix(self, rng):
        out = check_sequences(rng.normal(size=(4, 3)))
        assert len(out) == 1 and out[0].dtype == np.float64

    @pytest.mark.parametrize(
        "X",
        [[], [np.zeros((0, 3))], [np.zeros(3)], [np.zeros((2, 3)), np.zeros((2, 4))], [np.array([[np.nan]])]],
    )
    def test_bad_features(self, X):
        with pytest.raises(ValueError):
            check_sequences(X)

    def test_width_check(self):
        with pytest.raises(ValueError, match="expected 4"):
            check_sequences([np.zeros((2, 3))], n_features=4)

    def test_label_mismatches(self):
        X = [np.zeros((3, 2)), np.zeros((2, 2))]
        with pytest.raises(ValueError, match="label sequences"):
            check_sequences(X, [np.zeros(3)])
        with pytest.raises(ValueError, match="frames"):
            check_sequences(X, [np.zeros(3), np.zeros(3)])


class TestEstimator:
    def test_params_round_trip(self):
        est = DSANetSegmenter(**SMALL)
        params = est.get_params()
        assert params["num_tokens"] == 2 and params["variant"] == "quantum"
        est.set_params(variant="classical")
        assert clone(est).get_params()["variant"] == "classical"

    def test_not_fitted(self, rng):
        with pytest.raises(NotFittedError):
            DSANetSegmenter().predict([rng.normal(size=(3, 2))])

    def test_fit_predict(self, videos):
        X, y = videos
        est = DSANetSegmenter(**SMALL).fit(X, y)
        assert list(est.classes_) == ["cut", "pour", "stir"]
        assert est.n_features_in_ == 5 and len(est.history_) == 2
        pred = est.predict(X)
        assert [len(p) for p in pred] == [len(v) for v in y]
        assert set(np.concatenate(pred)) <= set(est.classes_)
        proba = est.predict_proba(X)
        np.testing.assert_allclose(proba[0].sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(est.classes_[np.argmax(proba[0], axis=1)], pred[0])
        assert 0.0 <= est.score(X, y) <= 1.0
        assert set(est.evaluate(X, y)) >= {"acc", "edit", "f1_10", "f1_25", "f1_50", "avg"}

    def test_fit_is_deterministic(self, videos):
        X, y = videos
        a = DSANetSegmenter(**SMALL).fit(X, y)
        b = clone(a).fit(X, y)
        for p, q in zip(a.model_.parameters(), b.model_.parameters()):
            assert p.data.tobytes() == q.data.tobytes()

    def test_wrong_width_at_predict(self, videos):
        X, y = videos
        est = DSANetSegmenter(**SMALL).fit(X, y)
        with pytest.raises(ValueError):
            est.predict([np.zeros((4, 6))])

    def test_too_many_tokens(self, videos):
        X, y = videos
        with pytest.raises(ValueError, match="num_tokens"):
            DSANetSegmenter(**{**SMALL, "num_tokens": 50}).fit(X, y)

    def test_single_class(self, rng):
        with pytest.raises(ValueError, match="two distinct"):
            DSANetSegmenter(**SMALL).fit([rng.normal(size=(4, 2))], [np.zeros(4)])
