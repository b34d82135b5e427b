"""Where should a biped with an overheated right leg stand?

Runs the thermal descent from the nominal crouch for each contact set and
prints what the right knee is predicted to reach 20 s later.

    python3 demos/thermal_stances.py
"""
import numpy as np

from thermal_recovery.dynamics import solve_statics
from thermal_recovery.recovery import load_scenario, update_cost_matrix
from thermal_recovery.thermal_ik import descend, predict_node_temperatures

sc = load_scenario("hot_right_leg")
model = sc.model
scene = sc.scene.with_weights(np.diag(update_cost_matrix(sc.policy, sc.scene.t0)))
knee = scene.node_ids.index("knee_r_core")
print("hot nodes:", [n for n, t in zip(scene.node_ids, scene.t0) if t > sc.policy.trigger])

q_nom = model.pose("nominal", model.contact_config("double"))
for name in sc.policy.contacts:
    c = model.contact_config(name)
    q0 = model.project_to_contacts(q_nom, c)
    res = descend(scene, model, q0, c, sc.settings)
    before = predict_node_temperatures(scene, model, q0, c)[knee]
    after = predict_node_temperatures(scene, model, res.q, c)[knee]
    tau = solve_statics(model, res.q, c).efforts
    print(f"\n{name}: f {res.f0:.4g} -> {res.f:.4g} after {res.iterations} iterations ({res.stop_reason})")
    print(f"  right knee in 20 s: {before:.2f} -> {after:.2f} degC, contact drift {res.drift:.1e}")
    print("  efforts [N m]:", dict(zip(model.actuator_names, tau.round(2))))
