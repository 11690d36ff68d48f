import numpy as np
import pytest

from perturbkit.data import make_blobs, make_patterns
from perturbkit.errors import DivergenceError, ModelFormatError
from perturbkit.model import Dataset, Example, forward
from perturbkit.train import NetSpec, train_toy


class TestTrainToy:
    def test_separable_blobs_reach_high_accuracy(self):
        data = make_blobs(200, n_classes=2, dim=2, seed=0)
        result = train_toy(NetSpec((2, 16, 2)), data, epochs=300, lr=0.2, seed=0)
        assert result.accuracy >= 0.95

    def test_zero_epochs_returns_initialization(self):
        data = make_blobs(50, n_classes=2, dim=2, seed=1)
        a = train_toy(NetSpec((2, 8, 2)), data, epochs=0, lr=0.5, seed=3)
        b = train_toy(NetSpec((2, 8, 2)), data, epochs=0, lr=0.0, seed=3)
        x = np.array([0.3, -1.0])
        assert np.array_equal(forward(a.model, x), forward(b.model, x))
        assert a.losses == []

    def test_zero_learning_rate_keeps_loss(self):
        data = make_blobs(50, n_classes=2, dim=2, seed=2)
        result = train_toy(NetSpec((2, 8, 2)), data, epochs=25, lr=0.0, seed=4)
        assert result.final_loss == result.losses[0]

    def test_deterministic_given_seed(self):
        data = make_blobs(60, n_classes=3, dim=2, seed=3)
        a = train_toy(NetSpec((2, 10, 3)), data, epochs=50, lr=0.1, seed=5)
        b = train_toy(NetSpec((2, 10, 3)), data, epochs=50, lr=0.1, seed=5)
        x = np.array([1.0, -2.0])
        assert np.array_equal(forward(a.model, x), forward(b.model, x))
        assert a.losses == b.losses

    def test_divergence_reports_epoch(self):
        data = make_blobs(50, n_classes=2, dim=2, seed=4)
        with pytest.raises(DivergenceError) as exc:
            train_toy(NetSpec((2, 8, 2)), data, epochs=500, lr=1e9, seed=0)
        assert exc.value.epoch >= 1

    def test_regression_autoencoder_improves(self):
        data = make_patterns(40, dim=16, seed=5)
        spec = NetSpec((16, 8, 16), activation="tanh")
        result = train_toy(spec, data, epochs=300, lr=0.1, seed=1)
        assert result.final_loss < result.losses[0] * 0.5

    def test_empty_dataset_rejected(self):
        with pytest.raises(ModelFormatError):
            train_toy(NetSpec((2, 4, 2)), Dataset([]), epochs=1, lr=0.1, seed=0)

    def test_unlabeled_untargeted_rejected(self):
        data = Dataset([Example([0.0, 0.0])])
        with pytest.raises(ModelFormatError):
            train_toy(NetSpec((2, 4, 2)), data, epochs=1, lr=0.1, seed=0)

    def test_label_out_of_range_rejected(self):
        data = Dataset([Example([0.0, 0.0], label=5)])
        with pytest.raises(ModelFormatError):
            train_toy(NetSpec((2, 4, 2)), data, epochs=1, lr=0.1, seed=0)

    def test_bad_sizes_rejected(self):
        with pytest.raises(ModelFormatError):
            NetSpec((2,))
