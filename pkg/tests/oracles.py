"""Independent reference implementations used as test oracles.

Nothing here imports the package's numeric, cell or seq2seq code: every
routine is written directly against numpy (or plain Python) so that agreement
with the package is evidence, not tautology.
"""
import math

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def textbook_gru(x, h, Wr, br, Wu, bu, Wc, bc):
    """Single-vector GRU step; ``x``, ``h`` are 1-D, weights act on [x, h]."""
    xh = np.concatenate([x, h])
    r = sigmoid(xh @ Wr + br)
    u = sigmoid(xh @ Wu + bu)
    c = np.tanh(np.concatenate([x, r * h]) @ Wc + bc)
    return u * h + (1.0 - u) * c


def propagation_by_definition(A):
    """D^-1/2 (A+I) D^-1/2 evaluated entry by entry."""
    n = len(A)
    deg = [sum(A[i]) + 1.0 for i in range(n)]
    return np.array([[((A[i][j] if i != j else 1.0)) / math.sqrt(deg[i] * deg[j]) for j in range(n)]
                     for i in range(n)])


def gcgru_reference(P, x, h, gates):
    """GC-GRU step with explicit loops over gates; ``gates`` maps name -> (W, b)."""
    def conv(inp, W, b):
        return P @ inp @ W + b
    xh = np.hstack([x, h])
    r = sigmoid(conv(xh, *gates["reset"]))
    u = sigmoid(conv(xh, *gates["update"]))
    c = np.tanh(conv(np.hstack([x, r * h]), *gates["candidate"]))
    return u * h + (1.0 - u) * c


def single_level_seq2seq(P, X, enc, dec, out_W, out_b, horizon):
    """Plain one-layer GCGRU encoder-decoder with no teacher forcing.

    ``enc``/``dec`` map gate name -> (W, b) as numpy arrays.
    """
    n, d = X.shape
    hidden = out_W.shape[0]
    h = np.zeros((n, hidden))
    for t in range(d):
        h = gcgru_reference(P, X[:, t:t + 1], h, enc)
    y = X[:, d - 1:d]
    preds = []
    for _ in range(horizon):
        h = gcgru_reference(P, y, h, dec)
        y = h @ out_W + out_b
        preds.append(y)
    return np.hstack(preds)


def adjacency_brute_force(segments):
    """Pairwise endpoint comparison over (link, origin, destination) triples."""
    n = len(segments)
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            _, oi, di = segments[i]
            _, oj, dj = segments[j]
            if oi == oj or oi == dj or di == oj or di == dj:
                A[i, j] = 1.0
    return A
