"""Thin FFT wrappers so the worker count is set in one place.

pocketfft splits batched transforms across workers without changing the
arithmetic of any single transform, so results do not depend on WORKERS.
"""
import scipy.fft

WORKERS = 1


def set_workers(n):
    global WORKERS
    WORKERS = max(1, int(n))


def fft(x, overwrite=False):
    return scipy.fft.fft(x, axis=-1, workers=WORKERS, overwrite_x=overwrite)


def ifft(x, overwrite=False):
    return scipy.fft.ifft(x, axis=-1, workers=WORKERS, overwrite_x=overwrite)
