"""Feasibility check for the blob training surrogate, written independently of
the Rust code: numpy MLP [2,16,2], ReLU, softmax CE, SGD with momentum 0.9 and
weight decay 5e-4, per-epoch log or cosine annealing with warm restarts.

Prints epoch-1 mean loss, final mean loss, their ratio, and final accuracy.
Randomness differs from the Rust build, so only the qualitative outcome
should match.
"""

import math
import sys

import numpy as np


def cycle_lengths(initial, interval, mult, epochs):
    lengths = [initial]
    i = 1
    while sum(lengths) < epochs:
        lengths.append(max(1, round(interval * mult ** (i - 1))))
        i += 1
    return lengths


def schedule(kind, epochs, lo=0.001, hi=0.1):
    out = []
    for t_i in cycle_lengths(10, 10, 2.0, epochs):
        for t_cur in range(1, t_i + 1):
            if kind == "log":
                b = 1.0 / (hi - lo)
                v = abs(lo + 0.5 * (hi - lo) * (1 + math.log(math.pi * t_i / t_cur) / math.log(b)))
            else:
                v = lo + 0.5 * (hi - lo) * (1 + math.cos(math.pi * t_cur / t_i))
            out.append(v)
    return out[:epochs]


def run(kind, seed):
    rng = np.random.default_rng(seed)
    c = 4.0 / math.sqrt(2.0)
    centers = np.array([[c * 0.5, -c * 0.5], [-c * 0.5, c * 0.5]])
    x = np.concatenate([centers[k] + rng.standard_normal((500, 2)) for k in range(2)])
    y = np.repeat([0, 1], 500)

    def glorot(fi, fo):
        lim = math.sqrt(6.0 / (fi + fo))
        return rng.uniform(-lim, lim, (fo, fi))

    params = [glorot(2, 16), np.zeros(16), glorot(16, 2), np.zeros(2)]
    vel = [None] * 4
    lrs = schedule(kind, 200)
    hist = []
    for epoch in range(200):
        perm = rng.permutation(1000)
        total, correct = 0.0, 0
        for s in range(0, 1000, 128):
            idx = perm[s:s + 128]
            xb, yb = x[idx], y[idx]
            w1, b1, w2, b2 = params
            h = xb @ w1.T + b1
            a = np.maximum(h, 0)
            z = a @ w2.T + b2
            z = z - z.max(axis=1, keepdims=True)
            p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
            n = len(idx)
            total += -np.log(np.maximum(p[np.arange(n), yb], 1e-12)).sum()
            correct += (p.argmax(axis=1) == yb).sum()
            dz = p.copy()
            dz[np.arange(n), yb] -= 1
            dz /= n
            gw2 = dz.T @ a
            gb2 = dz.sum(0)
            dh = (dz @ w2) * (h > 0)
            gw1 = dh.T @ xb
            gb1 = dh.sum(0)
            for i, g in enumerate([gw1, gb1, gw2, gb2]):
                g = g + 5e-4 * params[i]
                vel[i] = g if vel[i] is None else 0.9 * vel[i] + g
                params[i] = params[i] - lrs[epoch] * vel[i]
        hist.append((total / 1000, correct / 1000))
    return hist


if __name__ == "__main__":
    for kind in ("log", "cosine"):
        for seed in range(int(sys.argv[1]) if len(sys.argv) > 1 else 5):
            h = run(kind, seed)
            print(f"{kind} seed {seed}: epoch1 {h[0][0]:.4f} final {h[-1][0]:.4f} "
                  f"ratio {h[-1][0] / h[0][0]:.3f} acc {h[-1][1]:.3f}")
