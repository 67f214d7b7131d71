import numpy as np

from .errors import ConditioningError

PSD_TOL = 1e-9


def symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def clip_psd(m, tol=PSD_TOL, what="covariance", step=None):
    """Symmetrize ``m`` and zero eigenvalues in ``[-tol, 0)``.

    Eigenvalues below ``-tol`` (relative to the largest magnitude, floored at 1)
    raise ConditioningError.
    """
    m = symmetrize(np.asarray(m, dtype=float))
    w, v = np.linalg.eigh(m)
    scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
    if w.size and w.min() < -tol * scale:
        raise ConditioningError(
            f"{what} is indefinite (eigenvalue {w.min():.3e})",
            step=step, eigenvalue=float(w.min()))
    if w.size and w.min() < 0:
        w = np.clip(w, 0.0, None)
        m = symmetrize((v * w) @ v.T)
    return m


def psd_factor(m):
    """Return F with F @ F.T == m for a symmetric PSD (possibly singular) m."""
    m = clip_psd(m)
    w, v = np.linalg.eigh(m)
    return v * np.sqrt(np.clip(w, 0.0, None))


def is_psd(m, tol=PSD_TOL):
    m = symmetrize(np.asarray(m, dtype=float))
    if m.size == 0:
        return True
    w = np.linalg.eigvalsh(m)
    return bool(w.min() >= -tol * max(1.0, np.abs(w).max()))


def is_pd(m):
    try:
        np.linalg.cholesky(symmetrize(np.asarray(m, dtype=float)))
    except np.linalg.LinAlgError:
        return False
    return True
