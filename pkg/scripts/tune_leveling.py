"""Tune the platform-leveling loop and report the closed-loop numbers.

Runs the relay-free ultimate-gain search on the frozen platform plant,
applies the classic Ziegler-Nichols table with the integral term capped at
the actuator's 8 deg/s authority, and characterizes the result on a 10 deg
slope step (noise free, then with IMU noise and shielded drift). Also
cross-checks the search against the delayed-integrator plant, whose
ultimate point is known in closed form. Run from the repo root:

    python3 scripts/tune_leveling.py
"""

import math

import numpy as np

from irribot.leveling import (
    DelayedIntegratorPlant,
    DriftMonitor,
    PlatformPlant,
    find_ultimate_gain,
    run_leveling_episode,
    tune_leveling,
)


def main():
    gains, ku, tu = tune_leveling(PlatformPlant(), integral_authority=8.0)
    print("platform plant (max_rate 8 deg/s, delay 0.05 s, tau 0.15 s):")
    print(f"  Ku = {ku:.6f}   Tu = {tu:.6f} s")
    print(f"  Kp = {gains.kp:.6f}   Ki = {gains.ki:.6f}   Kd = {gains.kd:.6f}")
    print(f"  integral clamp = {gains.integral_limit:.6f} deg*s")

    trace = run_leveling_episode(PlatformPlant(), gains, 10.0, 8.0, 0.01)
    print("\n10 deg step, noise free:")
    print(f"  response time       = {trace.response_time:.2f} s")
    print(f"  steady-state error  = {trace.steady_state_error:.4f} deg")
    print(f"  saturated ticks     = {int(trace.saturated.sum())}")

    noisy = run_leveling_episode(
        PlatformPlant(), gains, 10.0, 8.0, 0.01,
        noise_std=0.05,
        drift=DriftMonitor(drift_rate=0.0015, shielded=True),
        rng=np.random.default_rng(7),
    )
    print("\n10 deg step, IMU noise 0.05 deg + shielded drift:")
    print(f"  response time       = {noisy.response_time:.2f} s")
    print(f"  steady-state error  = {noisy.steady_state_error:.4f} deg")
    print(f"  max estimation gap  = {noisy.max_estimation_error:.4f} deg")

    print("\ndelayed-integrator cross-check (Ku = pi/(2kL), Tu = 4L):")
    for k, delay in ((1.0, 0.05), (2.0, 0.08), (0.5, 0.1)):
        got_ku, got_tu = find_ultimate_gain(DelayedIntegratorPlant(k, delay))
        ku_true = math.pi / (2.0 * k * delay)
        tu_true = 4.0 * delay
        print(f"  k={k:.1f} L={delay:.2f}:  Ku {got_ku:8.4f} vs {ku_true:8.4f}"
              f"  ({100 * (got_ku / ku_true - 1):+.2f}%)"
              f"   Tu {got_tu:.4f} vs {tu_true:.4f}"
              f"  ({100 * (got_tu / tu_true - 1):+.2f}%)")


if __name__ == "__main__":
    main()
