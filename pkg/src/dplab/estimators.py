"""scikit-learn style wrappers for the two protocols that map data to data.

Only the TV reconstruction and the barrier classification have a natural
fit/transform or fit/predict reading; the other protocols produce reports,
not per-sample outputs, and are driven through :mod:`dplab.harness`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import barrier as bar
from . import tv
from .exceptions import InconclusiveVerdict, InvalidArgument
from .grid import FREE, Field


def _as_images(X):
    """Accept one 2D image or a stack ``(n, h, w)``; returns a 3D float array."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidArgument(f"expected an image or a stack of images, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("input contains non-finite values")
    return arr


class TVReconstructor(TransformerMixin, BaseEstimator):
    """Denoise images by TV-Tikhonov with a discrepancy-principle weight.

    ``fit`` estimates the noise level from training pairs ``(X, y)`` of noisy
    and clean images when ``noise_level`` is ``None``; ``transform`` solves
    one problem per image.  ``lambda_`` holds the weight picked for each
    transformed image.
    """

    def __init__(self, noise_level=None, tau=tv.DEFAULT_TAU, mu=tv.DEFAULT_MU, tol=tv.DEFAULT_TOL,
                 lambda_grid=None, rule="morozov", topology=FREE):
        self.noise_level = noise_level
        self.tau = tau
        self.mu = mu
        self.tol = tol
        self.lambda_grid = lambda_grid
        self.rule = rule
        self.topology = topology

    def fit(self, X, y=None):
        X = _as_images(X)
        if self.noise_level is not None:
            self.noise_level_ = float(self.noise_level)
        elif y is not None:
            Y = _as_images(y)
            if Y.shape != X.shape:
                raise InvalidArgument("clean targets must match the noisy inputs")
            # Euclidean norm per image, averaged over the training set
            self.noise_level_ = float(np.mean([np.linalg.norm(a - b) for a, b in zip(X, Y)]))
        else:
            raise InvalidArgument("fit needs noise_level or clean targets y")
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "noise_level_")
        X = _as_images(X)
        grid = tv.LambdaGrid(self.lambda_grid) if self.lambda_grid is not None else None
        out, lams = [], []
        for img in X:
            d = Field.from_array(img, topology=self.topology)
            p = tv.InverseProblem(tv.ForwardOperator.identity(), d, self.noise_level_, self.tau, self.mu)
            lam, u = tv.discrepancy_lambda(p, grid, method="bisect", rule=self.rule, tol=self.tol)
            out.append(u.values)
            lams.append(lam)
        self.lambda_ = np.asarray(lams)
        return np.stack(out)


class BarrierClassifier(ClassifierMixin, BaseEstimator):
    """Predict Markov uniqueness (``True``) for environment fields.

    Each field is thresholded at its own calibrated ``theta`` and the
    resulting barrier is classified by the capacity trend test.  Members
    whose trend is inconclusive are predicted as ``None`` unless
    ``inconclusive`` names a fallback label.
    """

    def __init__(self, target=0.03125, ladder=bar.DEFAULT_LADDER, env_size=16, inconclusive=None):
        self.target = target
        self.ladder = ladder
        self.env_size = env_size
        self.inconclusive = inconclusive

    def fit(self, X, y=None):
        X = _as_images(X)
        if X.shape[1:] != (self.env_size, self.env_size):
            raise InvalidArgument(f"fields must be {self.env_size}x{self.env_size}")
        self.family_ = bar.barrier_family(self.env_size)
        self.classes_ = np.array([False, True])
        self.n_features_in_ = self.env_size ** 2
        return self

    def predict(self, X):
        check_is_fitted(self, "family_")
        X = _as_images(X)
        native = self.family_.policies[0]
        out = []
        for img in X:
            env = Field.from_array(img)
            theta = bar.calibrate_theta(env, self.target, self.family_)
            spec = bar.BarrierSpec(bar.refine(env, native, 0), float(theta))
            try:
                out.append(bar.markov_unique(spec, tuple(self.ladder))[0])
            except InconclusiveVerdict:
                out.append(self.inconclusive)
        return np.array(out, dtype=object if any(v is None for v in out) else bool)
