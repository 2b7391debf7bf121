"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (explicit
loops, two-pass statistics, recursive definitions) and never calls into
the package code paths it is used to check.
"""

from __future__ import annotations

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    """Quadruple-loop cross-correlation for a single [C,H,W] image."""
    c_in, h, wdt = x.shape
    c_out, c_in2, kh, kw = w.shape
    assert c_in == c_in2
    xp = np.zeros((c_in, h + 2 * padding, wdt + 2 * padding), dtype=np.float64)
    xp[:, padding:padding + h, padding:padding + wdt] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wdt + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo), dtype=np.float64)
    for oc in range(c_out):
        for oy in range(ho):
            for ox in range(wo):
                acc = 0.0
                for ic in range(c_in):
                    for ky in range(kh):
                        for kx in range(kw):
                            acc += xp[ic, oy * stride + ky, ox * stride + kx] * w[oc, ic, ky, kx]
                out[oc, oy, ox] = acc + (b[oc] if b is not None else 0.0)
    return out


def group_norm_two_pass(x, gamma, beta, groups, eps=1e-5):
    """Two-pass per-group statistics for one [C,H,W] sample."""
    c, h, w = x.shape
    per = c // groups
    out = np.zeros_like(x, dtype=np.float64)
    for g in range(groups):
        chunk = x[g * per:(g + 1) * per].astype(np.float64)
        mean = chunk.sum() / chunk.size
        var = ((chunk - mean) ** 2).sum() / chunk.size
        out[g * per:(g + 1) * per] = (chunk - mean) / np.sqrt(var + eps)
    return gamma[:, None, None] * out + beta[:, None, None]


def correlate_loops(fa, fb, scale):
    """Triple-loop all-pairs dot products between two [D,h,w] maps."""
    d, h, w = fa.shape
    out = np.zeros((h * w, h, w), dtype=np.float64)
    for py in range(h):
        for px in range(w):
            p = py * w + px
            for qy in range(h):
                for qx in range(w):
                    out[p, qy, qx] = scale * float(np.dot(fa[:, py, px], fb[:, qy, qx]))
    return out


def finite_difference(f, theta, indices, step=1e-3):
    """Central finite differences of scalar f at the given flat indices."""
    grads = {}
    flat = theta.reshape(-1)
    for idx in indices:
        orig = flat[idx]
        flat[idx] = orig + step
        fp = f()
        flat[idx] = orig - step
        fm = f()
        flat[idx] = orig
        grads[idx] = (fp - fm) / (2.0 * step)
    return grads


def mse_loop(a, b):
    total = 0.0
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        total += (float(x) - float(y)) ** 2
    return total / a.size


# ---------------------------------------------------------------------------
# Segmentation metrics reference (independent of rthare.metrics)


def runs_of(seq):
    """Maximal runs of equal labels as (label, start, end) half-open triples."""
    segs = []
    start = 0
    for i in range(1, len(seq) + 1):
        if i == len(seq) or seq[i] != seq[start]:
            segs.append((seq[start], start, i))
            start = i
    return segs


def accuracy_loop(pred, gt):
    hits = 0
    for p, g in zip(pred, gt):
        if p == g:
            hits += 1
    return 100.0 * hits / len(gt)


def levenshtein_matrix(a, b):
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[n][m]


def edit_score_reference(pred, gt):
    sp = [s[0] for s in runs_of(pred)]
    sg = [s[0] for s in runs_of(gt)]
    dist = levenshtein_matrix(sp, sg)
    return 100.0 * (1.0 - dist / max(len(sp), len(sg)))


def f1_reference(pred, gt, k, strict=False):
    """Greedy IoU matching; first best same-label unmatched ground truth wins."""
    ps = runs_of(pred)
    gs = runs_of(gt)
    matched = [False] * len(gs)
    tp = 0
    fp = 0
    for plabel, pstart, pend in ps:
        best_iou = -1.0
        best_j = -1
        for j, (glabel, gstart, gend) in enumerate(gs):
            inter = max(0, min(pend, gend) - max(pstart, gstart))
            union = max(pend, gend) - min(pstart, gstart)
            iou = (inter / union) if plabel == glabel else 0.0
            if iou > best_iou:
                best_iou = iou
                best_j = j
        ok = best_iou > k / 100.0 if strict else best_iou >= k / 100.0
        if ok and best_iou > 0 and not matched[best_j]:
            tp += 1
            matched[best_j] = True
        else:
            fp += 1
    fn = matched.count(False)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 100.0 * 2 * precision * recall / (precision + recall)
