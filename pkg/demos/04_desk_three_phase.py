"""The three-phase protocol at desk scale: plain, spectral p=0, spectral p.

Uses a reduced oriented-bars set so it finishes in a couple of minutes.
"""

from dctconv.data_io import synthetic_dataset
from dctconv.presets import get_preset
from dctconv.training import TrainData, run_three_phase

preset = get_preset("vgg-desk")
syn = dict(preset.synthetic, n_train=1600, n_test=400)
kind = syn.pop("kind")
train, test = synthetic_dataset(kind, seed=0, **syn)
data = TrainData.from_datasets(train, test)

results = run_three_phase(preset.config, data, preset.regime, p=0.7, seed=0, epochs=4, log=print)
print()
for phase, res in results.items():
    print(f"{phase:12s} final test accuracy {res.final_metric:.3f}")
