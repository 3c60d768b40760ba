"""Scikit-learn style wrappers around the reconstruction algorithms.

Each estimator is a transformer from sinogram space to image space: ``X`` is
a 2-D array whose rows are flattened channel-reduced sinograms
(``mask.n_kept * geom.n_samples`` values, channel-major) and ``transform``
returns one flattened ``ny * nx`` image per row. ``fit`` validates the
configuration and precomputes whatever the solver can reuse across rows, so
the estimators compose with pipelines and grid search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dip import DipConfig, dip_reconstruct
from .recon import estimate_normal_operator_norm, recon_tv, ubp
from .validation import (
    check_geometry_pair,
    check_sino_matrix,
    images_to_rows,
    rows_to_sinograms,
)


class _SinogramTransformer(BaseEstimator, TransformerMixin):
    """Shared plumbing: parameter checks and row <-> domain-object conversion."""

    def _validate(self, X):
        check_geometry_pair(self.geometry, self.mask)
        return check_sino_matrix(X, self.geometry, self.mask)

    def fit(self, X, y=None):
        X = self._validate(X)
        self.n_features_in_ = X.shape[1]
        self._fit_extra(X)
        return self

    def _fit_extra(self, X):
        pass

    def transform(self, X):
        X = self._validate(X)
        images = [
            self._reconstruct(s) for s in rows_to_sinograms(X, self.geometry, self.mask)
        ]
        return images_to_rows(images)

    def _reconstruct(self, sino):
        raise NotImplementedError


class UniversalBackprojection(_SinogramTransformer):
    """Direct back-projection; linear, stateless, and fast."""

    def __init__(self, geometry=None, mask=None):
        self.geometry = geometry
        self.mask = mask

    def _reconstruct(self, sino):
        return ubp(sino, self.geometry, self.mask)


class TotalVariationReconstructor(_SinogramTransformer):
    """Proximal-gradient TV compressed sensing.

    ``fit`` runs the power method once and stores the step size in ``step_``;
    ``transform`` reuses it for every row. Objective histories of the last
    ``transform`` call are kept in ``objective_histories_``.
    """

    def __init__(
        self,
        geometry=None,
        mask=None,
        weight: float = 1e-3,
        step: float | None = None,
        iters: int = 300,
        inner_iters: int = 20,
    ):
        self.geometry = geometry
        self.mask = mask
        self.weight = weight
        self.step = step
        self.iters = iters
        self.inner_iters = inner_iters

    def _fit_extra(self, X):
        if self.step is None:
            self.lipschitz_ = estimate_normal_operator_norm(self.geometry, self.mask)
            self.step_ = 0.9 / self.lipschitz_
        else:
            self.step_ = self.step

    def _reconstruct(self, sino):
        result = recon_tv(
            sino,
            self.mask,
            self.geometry,
            lam=self.weight,
            step=getattr(self, "step_", self.step),
            iters=self.iters,
            inner_iters=self.inner_iters,
        )
        self.objective_histories_.append(result.objective)
        return result.image

    def transform(self, X):
        self.objective_histories_ = []
        return super().transform(X)


class DeepImagePriorReconstructor(_SinogramTransformer):
    """Untrained-decoder compressed sensing with TV and shape-prior terms.

    The shape prior image is computed per row by back-projection, mirroring
    the intended pipeline. Loss histories land in ``loss_histories_``.
    """

    def __init__(
        self,
        geometry=None,
        mask=None,
        lambda_tv: float = 0.006,
        lambda_shape: float = 0.05,
        iters: int = 700,
        lr: float = 1e-3,
        seed: int = 0,
        channels: int = 64,
        tv_epsilon: float = 1e-6,
        normalize_prior: bool = True,
    ):
        self.geometry = geometry
        self.mask = mask
        self.lambda_tv = lambda_tv
        self.lambda_shape = lambda_shape
        self.iters = iters
        self.lr = lr
        self.seed = seed
        self.channels = channels
        self.tv_epsilon = tv_epsilon
        self.normalize_prior = normalize_prior

    def _config(self) -> DipConfig:
        return DipConfig(
            lambda_tv=self.lambda_tv,
            lambda_shape=self.lambda_shape,
            iters=self.iters,
            lr=self.lr,
            seed=self.seed,
            tv_epsilon=self.tv_epsilon,
            snapshot_every=0,
            channels=self.channels,
            normalize_prior=self.normalize_prior,
        )

    def _reconstruct(self, sino):
        prior = ubp(sino, self.geometry, self.mask)
        result = dip_reconstruct(sino, self.mask, self.geometry, prior, self._config())
        self.loss_histories_.append(result.history)
        return result.image

    def transform(self, X):
        self.loss_histories_ = []
        return super().transform(X)
