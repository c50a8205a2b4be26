"""Probit likelihood and its derivatives.

The class labels y_i in {-1, +1} are linked to latent values f_i through
p(y_i | f_i) = Phi(y_i * f_i), with Phi the standard normal CDF.  All
routines work on the log scale through ``scipy.special.log_ndtr`` so that
strongly negative margins (y_i * f_i down to -30 and far beyond) produce
finite values instead of log(0).
"""

import numpy as np
from scipy.special import log_ndtr

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _check_labels(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be -1 or +1")
    return y


def log_norm_pdf(x):
    """Log of the standard normal density."""
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def inv_mills_ratio(z):
    """phi(z) / Phi(z), stable for very negative z.

    Computed as exp(log phi - log Phi); for z -> -inf this grows like -z
    without overflow until z is astronomically negative.
    """
    z = np.asarray(z, dtype=float)
    return np.exp(log_norm_pdf(z) - log_ndtr(z))


def log_likelihood(y, f):
    """Sum of log Phi(y_i f_i).

    Parameters
    ----------
    y : array of -1/+1 labels
    f : array of latent values, same length

    Returns
    -------
    float
    """
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if y.shape != f.shape:
        raise ValueError("y and f must have the same length")
    return float(np.sum(log_ndtr(y * f)))


def loglik_grad(y, f):
    """Per-site first derivative of log Phi(y_i f_i) with respect to f_i."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if y.shape != f.shape:
        raise ValueError("y and f must have the same length")
    return y * inv_mills_ratio(y * f)


def loglik_neg_hess_diag(y, f):
    """Per-site negative second derivative of log Phi(y_i f_i).

    The probit log-likelihood is concave, so the result is positive
    everywhere: W_i = r (r + z) with z = y_i f_i and r = phi(z)/Phi(z).
    """
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if y.shape != f.shape:
        raise ValueError("y and f must have the same length")
    z = y * f
    r = inv_mills_ratio(z)
    return r * (r + z)


def probit_loglik_fn(y):
    """Fast closure over pre-validated labels for tight sampling loops."""
    y = _check_labels(y)

    def loglik(f):
        return float(np.sum(log_ndtr(y * f)))

    return loglik
