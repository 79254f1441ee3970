"""
Training the forecaster
=======================

Train the three-branch network on a 4x4 grid of a synthetic city and
compare its one-hour-ahead forecasts on held-out hours with the
persistence baseline ``X(t+1) = X(t)``.  Pass a smaller epoch count on the
command line for a quick look (default 50 epochs of 50 steps, about a
minute on one core).
"""

# %%
import sys
import time

from cartoflow.model import ModelConfig, TrainConfig
from cartoflow.pipeline import forecast_experiment, grid_series
from cartoflow.synth import ScenarioConfig, generate

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 50

scenario = generate(ScenarioConfig(n_stations=64, layout="uniform", T=2000, width_km=8, height_km=8,
                                   base_rate=5.0, daily_amplitude=0.8, weekly_amplitude=0.2, seed=1))
series = grid_series(scenario.records, 4, 4)

# %%
# Inputs are z-scored with statistics from the training hours only; the
# last 30% of the series is held out.
config = ModelConfig(rows=4, cols=4, normalize=True)
t0 = time.time()
run = forecast_experiment(series, config, epochs, seed=0, train_config=TrainConfig(steps_per_epoch=50))
print(f"trained {epochs} epochs in {time.time() - t0:.0f} s; "
      f"loss {run.training.epoch_means[0]:.0f} -> {run.training.epoch_means[-1]:.0f}")

# %%
model, base = run.report.aggregate(), run.persistence.aggregate()
print(f"model       RMSE {model['rmse']['mean']:.2f}  MAE {model['mae']['mean']:.2f}  r {model['pearson']['mean']:.2f}")
print(f"persistence RMSE {base['rmse']['mean']:.2f}  MAE {base['mae']['mean']:.2f}  r {base['pearson']['mean']:.2f}")
print(f"ratio {model['rmse']['mean'] / base['rmse']['mean']:.2f}")
