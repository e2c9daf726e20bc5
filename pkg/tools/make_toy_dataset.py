"""Regenerate the bundled 1000-sample multiclass LIBSVM toy set.

Three classes over 30 features whose scales spread geometrically, so the
logistic Hessian is badly conditioned; labels are sampled from a planted
softmax model (non-separable by construction).  Output is deterministic.
"""

import os

import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "bidiopt", "data",
                   "toy_multiclass.libsvm")

M = 1000
D_FEAT = 30
CLASSES = 3
DENSITY = 0.45
TEMPERATURE = 1.4
SEED = 20240619


def main():
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(SEED)))
    scales = 2.0 ** (np.arange(D_FEAT) / 6.0)       # 1 .. ~28
    X = rng.standard_normal((M, D_FEAT)) * scales
    mask = rng.random((M, D_FEAT)) < DENSITY
    X = np.where(mask, X, 0.0)
    # planted class model with per-feature inverse scaling: every feature
    # carries signal, so the flat directions matter for the optimum
    W = rng.standard_normal((CLASSES, D_FEAT)) / scales
    logits = X @ W.T / TEMPERATURE
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.random(M)
    labels = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)

    lines = []
    for i in range(M):
        toks = [str(labels[i] + 1)]
        for j in np.flatnonzero(X[i]):
            toks.append(f"{j + 1}:{X[i, j]:.6g}")
        lines.append(" ".join(toks))
    with open(os.path.abspath(OUT), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    counts = np.bincount(labels, minlength=CLASSES)
    print(f"wrote {OUT}: {M} samples, classes {counts.tolist()}, nnz {int((X != 0).sum())}")


if __name__ == "__main__":
    main()
