"""Writes the synthetic observations used by toy_analysis.toml.

The values are the toy full-complexity model at a nominal parameter set,
multiplied by a smooth +-4 % wiggle so that no model reproduces them exactly.
Calcite is additionally scaled by 0.97.
"""
import math
from pathlib import Path

PULSES = [151.35, 218.85, 290.85, 626.85, 698.85, 866.85]
CALCITE_Z = [3.81, 11.43, 19.05, 26.67, 34.29, 41.91, 49.53, 57.15]
CALCIUM_Z = [10.16, 20.32, 30.48, 39.37, 49.53]
NOMINAL = dict(c_a1=5e-8, c_a2=5e-7, rho_f=8.0, k_ub=2.55e-4)


def label(x):
    s = repr(x)
    return s[:-2] if s.endswith(".0") else s


def times():
    out = []
    for k, p in enumerate(PULSES):
        for off in [0.0, 0.5, 1.0, 2.0, 3.0, 4.0]:
            if k == 3 and off == 3.0:
                continue
            out.append(round((p + off) * 100.0) / 100.0)
    return out


def drivers(w):
    u1, u2 = w["c_a1"] / 1e-7, w["c_a2"] / 1e-6
    r, q = w["rho_f"] / 8.0, w["k_ub"] / 2.55e-4
    a = u1 + u2
    return q * r * (1 + 0.35 * a), 40 * (1 + 0.2 * a)


def wiggle(i, phase):
    return 1 + 0.04 * math.sin(1.7 * i + phase)


def main():
    act, length = drivers(NOMINAL)
    here = Path(__file__).parent / "observations"
    rows = ["quantity,space,time,value"]
    for i, z in enumerate(CALCITE_Z):
        e = act * math.exp(-z / length)
        v = 6 * e / (1 + 0.4 * e) * 0.97 * wiggle(i, 0.3)
        rows.append(f"calcite_content,{label(z)},890,{v:.6g}")
    (here / "calcite.csv").write_text("\n".join(rows) + "\n")

    rows = ["quantity,space,time,value"]
    i = 0
    for z in CALCIUM_Z:
        for t in times():
            k = max(j for j, p in enumerate(PULSES) if p <= t + 1e-9)
            s = t - PULSES[k]
            kappa = 0.03 * act * (1 + 0.08 * k)
            v = 333 * math.exp(-kappa * (z / 25 + s)) * wiggle(i, 1.1)
            rows.append(f"calcium_concentration,{label(z)},{label(t)},{v:.6g}")
            i += 1
    (here / "calcium.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
