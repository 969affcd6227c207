"""Rounds to target accuracy as a function of label skew.

Trains FedAvg on the calibration staircase (four single-class fractions,
three seeds each), then fits the reciprocal-quadratic round law and prints
measured against fitted rounds.
"""

from clusterfel import config, pipeline, roundsfit

cfg = config.load_config()
model, points = pipeline.calibrate(cfg)
print("mean distance  measured rounds  fitted rounds")
for p in points:
    print(f"{p.emd:13.3f}  {p.rounds:15.2f}  {roundsfit.predict(model, p.emd):13.2f}")
print(f"beta = {tuple(round(b, 4) for b in model.beta)}, NMSE = {model.nmse:.4f}")
