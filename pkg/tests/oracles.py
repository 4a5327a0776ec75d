"""Independent reference implementations used as test oracles.

Nothing here calls into the package's numerical code paths: the DFT is the
literal double sum, gradients come from central differences of the forward
pass, and the band masks are built bin by bin in pure Python.
"""

import cmath
import math

import numpy as np


def naive_dft(x):
    n = len(x)
    return np.array([sum(complex(x[j]) * cmath.exp(-2j * math.pi * j * k / n) for j in range(n)) for k in range(n)])


def naive_bin_mask(n, f_min, f_max, fs):
    keep = []
    for k in range(n):
        f = (k if k <= n - k else n - k) * fs / n
        keep.append(f_min <= f <= f_max)
    return np.array(keep)


def hand_filter(x, f_min, f_max, fs):
    spec = np.fft.fft(x)
    spec[~naive_bin_mask(len(x), f_min, f_max, fs)] = 0.0
    return np.fft.ifft(spec).real


def central_difference(f, x, h=1e-4):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def max_relative_error(a, b):
    """``max|a - b| / max(max|a|, max|b|)``, the usual scale-aware gradient-check error."""
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def tone(n, bin_index, fs, phase=0.0, amp=1.0):
    t = np.arange(n)
    return amp * np.cos(2 * np.pi * bin_index * t / n + phase)


def activation_pattern(params, X):
    """Which side of every LeakyReLU kink and max-pool tie each input sits on.

    Rows of ``X`` with identical patterns lie in the same linear piece of
    the network, where central differences are exact up to rounding.
    """
    from uwbpatch import nn

    h = np.atleast_2d(X)[:, :, None]
    bits = []
    for name in nn.LAYER_NAMES[:3]:
        h, _ = nn.conv1d_forward(h, params.weights[name], params.biases[name])
        h, pos = nn.leaky_forward(h, params.leaky_slope)
        bits.append(pos.reshape(len(h), -1))
        h, (first, _) = nn.maxpool_forward(h)
        bits.append(first.reshape(len(h), -1))
    z = h.transpose(0, 2, 1).reshape(len(h), -1) @ params.weights["fc1"].T + params.biases["fc1"]
    bits.append(z > 0)
    return np.concatenate(bits, axis=1)


def smooth_coordinates(params, x, h=1e-4):
    """Coordinates whose +-h perturbation stays inside the linear piece of ``x``."""
    d = x.size
    eye = np.eye(d) * h
    base = activation_pattern(params, x)[0]
    same_up = np.all(activation_pattern(params, x + eye) == base, axis=1)
    same_down = np.all(activation_pattern(params, x - eye) == base, axis=1)
    return same_up & same_down
