"""Run-length codecs for masks and float32 depth maps (JSON friendly)."""
import math

import numpy as np


def encode_mask(mask):
    """[[start, length], ...] runs of True pixels in row-major order."""
    flat = np.asarray(mask, dtype=bool).ravel()
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def decode_mask(runs, shape):
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for start, length in runs:
        flat[start:start + length] = True
    return flat.reshape(shape)


def encode_depth(depth):
    """[[value, count], ...] runs of identical float32 values; NaN becomes null."""
    flat = np.asarray(depth, dtype=np.float32).ravel()
    if flat.size == 0:
        return []
    nan = np.isnan(flat)
    same = (flat[1:] == flat[:-1]) | (nan[1:] & nan[:-1])
    starts = np.concatenate([[0], np.flatnonzero(~same) + 1])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    out = []
    for s, n in zip(starts, lengths):
        val = float(flat[s])
        out.append([None if math.isnan(val) else val, int(n)])
    return out


def decode_depth(runs, shape):
    vals = [np.nan if v is None else v for v, _ in runs]
    counts = [n for _, n in runs]
    flat = np.repeat(np.array(vals, dtype=np.float32), counts)
    return flat.reshape(shape)
