import numpy as np


def smooth_image(rng, c, h, w, lo=0.5, hi=2.0):
    """One sinusoid per channel with random low frequencies, values in [-1, 1]."""
    y, x = np.mgrid[0:h, 0:w]
    y, x = y / (h - 1), x / (w - 1)
    freqs = rng.uniform(lo, hi, (c, 3))
    return np.stack([np.sin(2 * np.pi * (a * x + b * y) + ph) for a, b, ph in freqs]).astype(np.float32)


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)
