#!/usr/bin/env python3
"""
gridglass - Demo Script
Runs the full pipeline: synthesize motor measurements, fit a template per torque,
validate it, then solve the motor feeder with the physics model and with the template.
"""

import os
import subprocess
import sys


def run_command(command, description, allowed=(0,)):
    """Run a command and report its outcome"""
    print(f"\n🔄 {description}")
    print(f"Running: {' '.join(command)}")
    print("-" * 50)

    try:
        result = subprocess.run(command, capture_output=True, text=True)
    except Exception as e:
        print(f"❌ Exception in {description}: {str(e)}")
        return False

    if result.returncode in allowed:
        print(f"✅ Success: {description} (exit {result.returncode})")
        if result.stdout:
            print(result.stdout[:800])
        return True
    print(f"❌ Error in {description} (exit {result.returncode})")
    print(result.stderr)
    return False


def gridglass(*args):
    return [sys.executable, "gridglass.py", *args]


def main():
    """Run the complete demo pipeline"""
    print("⚡ gridglass - Demo")
    print("=" * 60)

    if not os.path.exists('src/cli.py'):
        print("❌ Please run this script from the project root directory")
        sys.exit(1)
    os.makedirs('output', exist_ok=True)

    print("📋 Demo Pipeline Steps:")
    print("1. Two-bus power flow (analytic check)")
    print("2. Induction-motor measurement synthesis")
    print("3. Template fit at 10 N*m")
    print("4. Validation against reference data")
    print("5. Motor feeder: physics model vs template")
    print()

    steps = [
        (gridglass("solve", "data/two_bus.json", "--out", "output/two_bus.csv"),
         "Solving the two-bus case (expect V_R = 0.989898 at the load)", (0,)),
        (gridglass("solve", "data/two_bus_infeasible.json"),
         "Solving a load beyond the nose of the PV curve (expect exit 2)", (2,)),
        (gridglass("synth", "data/im_motor.json", "data/im_sweep.json", "--seed", "1",
                   "--out", "output/im_measurements.csv"),
         "Synthesizing motor currents for 330-380 V at 10 and 20 N*m", (0,)),
        (gridglass("fit", "output/im_measurements.csv", "--order", "3", "--tag", "10",
                   "--units", "si", "--out", "output/im_t10_template.json"),
         "Fitting a cubic template at 10 N*m", (0,)),
        (gridglass("validate", "output/im_t10_template.json", "data/im_reference.csv",
                   "--out", "output/im_t10_comparison.csv"),
         "Comparing the template with reference measurements", (0,)),
        (gridglass("solve", "data/im_case_si.json", "--out", "output/im_physics.csv"),
         "Solving the motor feeder with the physics model", (0,)),
        (gridglass("solve", "data/im_case_glass.json", "--out", "output/im_glass.csv"),
         "Solving the motor feeder with the fitted template", (0,)),
    ]
    for command, description, allowed in steps:
        if not run_command(command, description, allowed):
            print("Stopping demo")
            return

    print("\n🎉 Demo complete! Results are in output/")


if __name__ == "__main__":
    main()
