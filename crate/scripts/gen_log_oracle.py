"""Regenerate crates/core/tests/data/log_lr_oracle.csv.

Evaluates the cyclical log-annealing rate at 50 decimal digits with mpmath,
independently of the Rust implementation. Inputs are written with repr() so
both sides start from the same binary64 values.
"""
import random
import sys

from mpmath import mp, mpf, log, pi, fabs

mp.dps = 50

PAIRS = [
    (0.001, 0.1), (0.0001, 0.05), (0.001, 0.05), (0.01, 0.5),
    (1e-05, 0.9), (0.002, 0.02), (0.05, 0.2), (0.3, 0.9),
]
RULES = ["range", "min", "2.0", "10.0", "1.5", "100.0"]
CYCLE_LENGTHS = [1, 2, 3, 4, 5, 8, 10, 16, 20, 40, 50, 100, 1000, 10000]


def base_for(rule, lo, hi):
    if rule == "range":
        return 1 / (hi - lo)
    if rule == "min":
        return 1 / lo
    return mpf(float(rule))


def main(path):
    rng = random.Random(20240101)
    rows = []
    for _ in range(10_000):
        lo, hi = rng.choice(PAIRS)
        rule = rng.choice(RULES)
        t_i = rng.choice(CYCLE_LENGTHS)
        t_cur = rng.randint(1, t_i)
        mlo, mhi = mpf(lo), mpf(hi)
        b = base_for(rule, mlo, mhi)
        val = fabs(mlo + (mhi - mlo) / 2 * (1 + log(pi * t_i / t_cur) / log(b)))
        rows.append(f"{lo!r},{hi!r},{rule},{t_cur},{t_i},{mp.nstr(val, 30)}")
    with open(path, "w") as f:
        f.write("eta_min,eta_max,base,t_cur,t_i,expected\n")
        f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/data/log_lr_oracle.csv")
