"""
Estimating demand at a station that just opened
===============================================

A station without history cannot be forecast on its own.  After the
cartogram, though, it shares a grid cell with a few neighbours, and the
cell forecast divided by the number of stations in the cell is an
estimate for each of them.  Here a station opens halfway through a
noise-free synthetic series; the network only trains on hours before the
opening and then estimates the newcomer's hourly demand afterwards.
"""

# %%
import numpy as np

from cartoflow.evaluation import station_estimate_for
from cartoflow.model import ModelConfig, TrainConfig, predict, train
from cartoflow.pipeline import cartogram_for, grid_series, split_pivots
from cartoflow.synth import NewStation, ScenarioConfig, generate

T = 2000
opening = T // 2
scenario = generate(ScenarioConfig(
    n_stations=100, T=T, base_rate=0.5, base_rate_spread=0.1, cluster_rate_sigma=0.0, noise=0.0,
    daily_amplitude=0.8, weekly_amplitude=0.2, seed=11,
    new_station=NewStation((15.0, 15.0), opening, station_id="new")))

# %%
layout = cartogram_for(scenario.records)
series = grid_series(scenario.records, 4, 4, layout=layout)
j = series.station_ids.index("new")
cell = int(series.cell_of_station[j])
members = len(series.membership[cell])
print(f"new station lands in cell {cell} with {members - 1} neighbours")

# %%
config = ModelConfig(rows=4, cols=4, normalize=True)
train_pivots, later = split_pivots(T, config.resolution, opening - 1)
state = train(series, config, 50, seed=0, train_config=TrainConfig(steps_per_epoch=50),
              pivots=train_pivots).state
forecast = predict(state, series, later)

# %%
hours = later + 1
estimate = station_estimate_for(forecast[:, cell], members)
actual = scenario.records[j].demand[hours - 1]
err = np.abs(estimate - actual)
print(f"hours {hours[0]}..{hours[-1]}: max |error| {err.max():.2f}, mean {err.mean():.3f} bicycles")
for t in range(24):
    print(f"  hour {hours[t]:4d}  actual {actual[t]}  estimate {estimate[t]:.2f}")
