"""Identify a knee motor's thermal model from synthetic squat/stand telemetry,
then check how well it predicts without ever looking at a thermometer.

    python3 demos/identify_knee.py
"""
import numpy as np

from thermal_recovery.sysid import (
    evaluate_open_loop,
    fit,
    open_loop_prediction,
    squat_stand_schedule,
    synthesize_log,
)
from thermal_recovery.thermal_core import ThermalParams, steady_state_temperature

truth = ThermalParams(rc=120.0, beta_r=0.002, beta_bias_r=0.01, t_offset=27.0)

# 50 minutes of 4.5 minute holds, alternating positive and negative torque
effort = squat_stand_schedule(3000.0, sample_rate=10.0, interval=270.0)
log = synthesize_log({"knee_core": (truth, "knee")}, {"knee": effort},
                     sample_rate=10.0, ambient=25.0, noise=0.1, seed=0)
print(f"{len(log)} samples, effort levels {sorted(set(effort.round(1)))}")

params, report = fit(log, "knee_core")
print("\n            truth      fitted")
for name in ("rc", "beta_r", "beta_bias_r", "t_offset"):
    a, b = getattr(truth, name), getattr(params, name)
    print(f"{name:12s} {a:9.4g}  {b:9.4g}   ({100 * (b / a - 1):+.2f}%)")
print(f"gradient descent: {report.iterations} iterations, converged={report.converged}")

pred = open_loop_prediction(params, log, "knee_core", initial=25.0)
print(f"\nopen-loop RMSE against the noisy log: {evaluate_open_loop(params, log, 'knee_core'):.3f} degC")
print(f"worst single-sample miss: {np.max(np.abs(pred - log.temperatures['knee_core'])):.3f} degC")

for F in (0.0, 75.0, 150.0):
    print(f"hold {F:5.0f} N m forever -> {steady_state_temperature(params, F):6.2f} degC "
          f"(truth {steady_state_temperature(truth, F):6.2f})")
