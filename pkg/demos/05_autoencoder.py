"""Convolutional autoencoder with spectral (transposed) convolutions at p=0.5."""

import numpy as np

from dctconv.data_io import synthetic_dataset
from dctconv.presets import get_preset
from dctconv.training import TrainData, run_phase

preset = get_preset("ae1-desk")
syn = dict(preset.synthetic, n_train=1000, n_test=200)
kind = syn.pop("kind")
train, test = synthetic_dataset(kind, seed=0, **syn)
data = TrainData.from_datasets(train, test, "autoencoder")

res = run_phase(preset.config, data, preset.regime, "spectral_p", p=0.5, seed=0, epochs=4)
for rec in res.records:
    print(f"epoch {rec.epoch}: train loss {rec.train_loss:.4f}, test MSE {rec.test_metric:.5f}")

recon = res.model.predict(data.x_test[:4])
print("reconstruction range:", float(np.min(recon)), float(np.max(recon)))
print("baseline MSE of predicting the mean image:",
      float(((data.y_test - data.y_train.mean(0)) ** 2).mean()))
