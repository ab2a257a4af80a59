"""Independent reference implementations used to cross-check production code.

These deliberately avoid the library's own code paths: explicit pair
enumeration, compensated summation, naive scans, and triple-loop matrix
arithmetic.
"""

import math

import numpy as np


def tau_b_oracle(x, y):
    """Explicit pair enumeration, the tie-corrected formula on raw counts."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    concordant = discordant = tied_x_only = tied_y_only = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = (x[j] > x[i]) - (x[j] < x[i])
            dy = (y[j] > y[i]) - (y[j] < y[i])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tied_x_only += 1
            elif dy == 0:
                tied_y_only += 1
            elif dx == dy:
                concordant += 1
            else:
                discordant += 1
    c_d = concordant + discordant
    denom = math.sqrt((c_d + tied_x_only) * (c_d + tied_y_only))
    if denom == 0.0:
        return None
    return (concordant - discordant) / denom


def pearson_oracle(x, y):
    """Compensated-summation sample correlation."""
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    if sxx == 0.0 or syy == 0.0:
        return None
    return sxy / math.sqrt(sxx * syy)


def topk_oracle(index, query):
    """Naive linear scan: fsum dot products, repeated max search, same tie rule.

    Similarities are computed with compensated summation, so values can
    differ from the production BLAS reduction in the last ulp; callers
    compare the returned id ranking exactly and the similarities to within
    a tight tolerance. Exact ties (duplicated entries) are identical under
    both arithmetics and exercise the entry-order tie rule.
    """
    q = np.asarray(query.key, dtype=np.float64)
    q = q / math.sqrt(math.fsum(v * v for v in q))
    eligible = []
    for i in range(len(index.ids)):
        sim = math.fsum(a * b for a, b in zip(index.keys[i], q))
        sim = min(1.0, max(-1.0, sim))
        if index.ids[i] in query.exclude_ids:
            continue
        payload = index.payloads[i]
        if query.exclude_texts is not None and (payload.src, payload.mt) == query.exclude_texts:
            continue
        if query.min_similarity is not None and sim < query.min_similarity:
            continue
        if query.max_similarity is not None and sim >= query.max_similarity:
            continue
        eligible.append([i, sim])
    picked = []
    while eligible and len(picked) < query.k:
        best = 0
        for pos in range(1, len(eligible)):
            if eligible[pos][1] > eligible[best][1]:
                best = pos
        i, sim = eligible.pop(best)
        picked.append((index.ids[i], sim))
    return picked


def finite_difference_gradient(head, X, Y, h=1e-6):
    """Central finite differences of the training loss over all parameters."""
    from polyqe.head import flatten_params, loss, set_flat_params

    flat = flatten_params(head)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        set_flat_params(head, bumped)
        loss_plus = loss(head, X, Y)
        bumped[i] = flat[i] - h
        set_flat_params(head, bumped)
        loss_minus = loss(head, X, Y)
        grad[i] = (loss_plus - loss_minus) / (2.0 * h)
    set_flat_params(head, flat)
    return grad


def gradient_relative_error(analytic, numeric):
    """Max per-coordinate relative error with a floor for near-zero pairs."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def matmul_forward_oracle(head, x):
    """Triple-loop forward pass over one input vector."""
    a = [float(v) for v in x]
    last = len(head.weights) - 1
    for layer, (W, b) in enumerate(zip(head.weights, head.biases)):
        out = []
        for j in range(W.shape[1]):
            total = b[j]
            for i in range(W.shape[0]):
                total += a[i] * W[i, j]
            out.append(total)
        if layer < last:
            if head.activation == "tanh":
                out = [math.tanh(v) for v in out]
            else:
                out = [max(v, 0.0) for v in out]
        a = out
    return np.array(a)
