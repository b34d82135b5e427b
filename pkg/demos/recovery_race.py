"""Contact switching against the minimum-effort stance on the same hot plant.

Writes both traces plus the aligned comparison to ./recovery_race_out.

    python3 demos/recovery_race.py
"""
from pathlib import Path

from thermal_recovery.cli import compare_reports
from thermal_recovery.recovery import load_scenario, run_recovery

sc = load_scenario("hot_right_leg")
out = Path("recovery_race_out")
reports = {}
for mode in ("switching", "min-effort"):
    r = run_recovery(sc.plant(), sc.policy, mode=mode, settings=sc.settings, groups=sc.groups)
    r.write(out, mode.replace("-", "_"))
    reports[mode] = r
    print(f"{mode:10s} schedule {r.contact_schedule()}")
    for seg in r.schedule:
        print(f"    {seg['phase']:10s} {seg['contact']:13s} {seg['start']:6.1f} -> {seg['end']:6.1f} s")

summary = compare_reports(reports["switching"], reports["min-effort"], sc.hot_group)
print("\nright leg below 70 degC after:", summary["time_to_safe"])
print("steepest cooling of the right-leg norm [degC/s]:", summary["peak_cooling_rate"])
print("first to recover:", summary["first_recovered"])
print(f"traces written to {out.resolve()}")
