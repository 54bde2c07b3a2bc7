"""Hot inner loops, each in two interchangeable forms.

``*_loop`` functions are scalar loops compiled by numba; ``*_numpy`` functions
are vectorised equivalents. The public names bind to one or the other
depending on ``GCSL_DISABLE_NUMBA`` (see :mod:`gcsl._accel`). Both forms
perform the same floating point operations in the same order where it
matters, so integer outputs agree exactly and float outputs to rounding.
"""
from __future__ import annotations

import numpy as np

from ._accel import jit, select

# ---------------------------------------------------------------------------
# four-rooms movement with wall clipping

# door membership is closed up to this slack, so an agent clamped exactly onto a
# door jamb (c +- door_half, which need not round-trip through |y - c|) stays in it
DOOR_TOL = 1e-9


@jit
def four_rooms_move_loop(pos, delta, lo, hi, door_centers, door_half):
    n = pos.shape[0]
    out = np.empty_like(pos)
    for i in range(n):
        x = pos[i, 0]
        y = pos[i, 1]

        nx = min(max(x + delta[i, 0], 0.0), 1.0)
        if lo < y < hi:
            # inside a doorway of the horizontal wall: the door jambs bound x
            for c in door_centers:
                if abs(x - c) <= door_half + DOOR_TOL:
                    nx = min(max(nx, c - door_half), c + door_half)
        y_in_door = False
        for c in door_centers:
            if abs(y - c) <= door_half + DOOR_TOL:
                y_in_door = True
        if not y_in_door:
            if x <= lo and nx > lo:
                nx = lo
            elif x >= hi and nx < hi:
                nx = hi

        ny = min(max(y + delta[i, 1], 0.0), 1.0)
        if lo < nx < hi:
            for c in door_centers:
                if abs(y - c) <= door_half + DOOR_TOL:
                    ny = min(max(ny, c - door_half), c + door_half)
        x_in_door = False
        for c in door_centers:
            if abs(nx - c) <= door_half + DOOR_TOL:
                x_in_door = True
        if not x_in_door:
            if y <= lo and ny > lo:
                ny = lo
            elif y >= hi and ny < hi:
                ny = hi

        out[i, 0] = nx
        out[i, 1] = ny
    return out


def four_rooms_move_numpy(pos, delta, lo, hi, door_centers, door_half):
    x = pos[:, 0]
    y = pos[:, 1]

    nx = np.minimum(np.maximum(x + delta[:, 0], 0.0), 1.0)
    in_hband = (lo < y) & (y < hi)
    for c in door_centers:
        m = in_hband & (np.abs(x - c) <= door_half + DOOR_TOL)
        nx = np.where(m, np.minimum(np.maximum(nx, c - door_half), c + door_half), nx)
    y_in_door = np.zeros(x.shape, dtype=bool)
    for c in door_centers:
        y_in_door |= np.abs(y - c) <= door_half + DOOR_TOL
    nx = np.where(~y_in_door & (x <= lo) & (nx > lo), lo, nx)
    nx = np.where(~y_in_door & (x >= hi) & (nx < hi), hi, nx)

    ny = np.minimum(np.maximum(y + delta[:, 1], 0.0), 1.0)
    in_vband = (lo < nx) & (nx < hi)
    for c in door_centers:
        m = in_vband & (np.abs(y - c) <= door_half + DOOR_TOL)
        ny = np.where(m, np.minimum(np.maximum(ny, c - door_half), c + door_half), ny)
    x_in_door = np.zeros(x.shape, dtype=bool)
    for c in door_centers:
        x_in_door |= np.abs(nx - c) <= door_half + DOOR_TOL
    ny = np.where(~x_in_door & (y <= lo) & (ny > lo), lo, ny)
    ny = np.where(~x_in_door & (y >= hi) & (ny < hi), hi, ny)

    return np.stack([nx, ny], axis=1)


# ---------------------------------------------------------------------------
# inverse-CDF categorical sampling, one row per draw


@jit
def categorical_sample_loop(probs, u):
    n, k = probs.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = 0.0
        idx = k - 1
        for j in range(k):
            c += probs[i, j]
            if u[i] < c:
                idx = j
                break
        out[i] = idx
    return out


def categorical_sample_numpy(probs, u):
    cdf = np.cumsum(probs, axis=1)
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# softmax cross-entropy: summed loss and d(loss_sum)/d(logits)


@jit
def softmax_xent_loop(logits, actions):
    n, k = logits.shape
    grad = np.empty_like(logits)
    total = 0.0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(k):
            e = np.exp(logits[i, j] - m)
            grad[i, j] = e
            s += e
        for j in range(k):
            grad[i, j] /= s
        total += m + np.log(s) - logits[i, actions[i]]
        grad[i, actions[i]] -= 1.0
    return total, grad


def softmax_xent_numpy(logits, actions):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    total = float(np.sum(m[:, 0] + np.log(s[:, 0]) - logits[rows, actions]))
    grad = e / s
    grad[rows, actions] -= 1.0
    return total, grad


# ---------------------------------------------------------------------------
# exhaustive hindsight pairs of a stack of equal-length discrete trajectories


@jit
def relabel_cells_loop(states, actions, h_max):
    n, t1 = states.shape
    horizon = t1 - 1
    count = 0
    for t in range(horizon):
        count += min(t + h_max, horizon) - t
    total = count * n
    s_out = np.empty(total, dtype=np.int64)
    g_out = np.empty(total, dtype=np.int64)
    h_out = np.empty(total, dtype=np.int64)
    a_out = np.empty(total, dtype=np.int64)
    w_out = np.empty(total, dtype=np.float64)
    k = 0
    for i in range(n):
        for t in range(horizon):
            top = min(t + h_max, horizon)
            w = 1.0 / (top - t)
            for tg in range(t + 1, top + 1):
                s_out[k] = states[i, t]
                g_out[k] = states[i, tg]
                h_out[k] = tg - t
                a_out[k] = actions[i, t]
                w_out[k] = w
                k += 1
    return s_out, g_out, h_out, a_out, w_out


def relabel_cells_numpy(states, actions, h_max):
    horizon = states.shape[1] - 1
    t_idx, tg_idx = relabel_pairs(horizon, h_max)
    top = np.minimum(t_idx + h_max, horizon)
    w = 1.0 / (top - t_idx)
    n = states.shape[0]
    s_out = states[:, t_idx].reshape(-1)
    g_out = states[:, tg_idx].reshape(-1)
    a_out = actions[:, t_idx].reshape(-1)
    h_out = np.tile(tg_idx - t_idx, n)
    return (
        s_out.astype(np.int64),
        g_out.astype(np.int64),
        h_out.astype(np.int64),
        a_out.astype(np.int64),
        np.tile(w, n),
    )


def relabel_pairs(horizon: int, h_max: int) -> tuple[np.ndarray, np.ndarray]:
    """All (t, t') with 0 <= t < t' <= min(t + h_max, horizon), ordered by t then t'."""
    ts, tgs = [], []
    for t in range(horizon):
        top = min(t + h_max, horizon)
        ts.extend([t] * (top - t))
        tgs.extend(range(t + 1, top + 1))
    return np.asarray(ts, dtype=np.int64), np.asarray(tgs, dtype=np.int64)


# ---------------------------------------------------------------------------
# weighted scatter-add into a flat table


@jit
def scatter_add_loop(target, idx, weights):
    for k in range(idx.shape[0]):
        target[idx[k]] += weights[k]


def scatter_add_numpy(target, idx, weights):
    np.add.at(target, idx, weights)


four_rooms_move = select(four_rooms_move_loop, four_rooms_move_numpy)
categorical_sample = select(categorical_sample_loop, categorical_sample_numpy)
softmax_xent = select(softmax_xent_loop, softmax_xent_numpy)
relabel_cells = select(relabel_cells_loop, relabel_cells_numpy)
scatter_add = select(scatter_add_loop, scatter_add_numpy)

KERNELS = {
    "four_rooms_move": (four_rooms_move_loop, four_rooms_move_numpy),
    "categorical_sample": (categorical_sample_loop, categorical_sample_numpy),
    "softmax_xent": (softmax_xent_loop, softmax_xent_numpy),
    "relabel_cells": (relabel_cells_loop, relabel_cells_numpy),
    "scatter_add": (scatter_add_loop, scatter_add_numpy),
}
