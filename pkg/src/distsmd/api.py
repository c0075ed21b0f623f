"""scikit-learn style estimators on top of the SMD primitives.

These wrappers follow the usual conventions (constructor stores
hyperparameters only, ``fit`` returns ``self``, fitted attributes end in an
underscore) so they compose with sklearn pipelines and model selection.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state, check_X_y

from .density import GaussianDensity
from .engine import run_rounds
from .estimators import LinearEvidence, centralized_step, make_schedule
from .gaussian import LinearGaussianModel, LogisticLogLikelihood, _sigmoid, diag_gvi_kernel
from .scenarios.localization import build_localization
from .scenarios.mapping import kernel_features


class GaussianSMDRegressor(RegressorMixin, BaseEstimator):
    """Bayesian linear regression by streaming tempered Bayes updates.

    Each mini-batch applies ``p <- q(y | X, w)^alpha_t p`` in information
    form.  With the constant schedule ``"const:1"`` and one pass this is the
    exact conjugate posterior.
    """

    def __init__(self, noise_info=1.0, prior_info=1e-2, schedule="const:1", batch_size=32,
                 n_passes=1, fit_intercept=True):
        self.noise_info = noise_info
        self.prior_info = prior_info
        self.schedule = schedule
        self.batch_size = batch_size
        self.n_passes = n_passes
        self.fit_intercept = fit_intercept

    def _design(self, X):
        return np.column_stack([X, np.ones(len(X))]) if self.fit_intercept else X

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.posterior_ = None
        self.t_ = 0
        for _ in range(self.n_passes):
            self._stream(X, y)
        return self

    def partial_fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if not hasattr(self, "posterior_") or self.posterior_ is None:
            self.n_features_in_ = X.shape[1]
            self.posterior_, self.t_ = None, 0
        return self._stream(X, y)

    def _stream(self, X, y):
        D = self._design(X)
        k = D.shape[1]
        if self.posterior_ is None:
            self.posterior_ = GaussianDensity(("w",), (k,), self.prior_info * np.eye(k), np.zeros(k))
        sched = make_schedule(self.schedule)
        for start in range(0, len(D), self.batch_size):
            H = D[start:start + self.batch_size]
            model = LinearGaussianModel(("w",), (k,), H, self.noise_info * np.eye(len(H)))
            alpha = sched(self.t_, self.posterior_)
            self.posterior_ = centralized_step(self.posterior_,
                                               LinearEvidence(model, y[start:start + len(H)]), alpha)
            self.t_ += 1
        w = self.posterior_.mean
        self.coef_ = w[:-1] if self.fit_intercept else w
        self.intercept_ = float(w[-1]) if self.fit_intercept else 0.0
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "posterior_")
        X = check_array(X)
        D = self._design(X)
        mean = D @ self.posterior_.mean
        if not return_std:
            return mean
        var = np.einsum("ni,ij,nj->n", D, self.posterior_.covariance, D) + 1.0 / self.noise_info
        return mean, np.sqrt(var)


class KernelOccupancyClassifier(ClassifierMixin, BaseEstimator):
    """Kernel logistic occupancy classifier fitted by diagonal Gaussian VI.

    Features are ``g1 * exp(-g2 ||x - c||^2)`` for kernel centres ``c``; when
    ``centers`` is None a ``n_centers``-point grid over the data's bounding
    box is used and ``g2`` defaults to ``0.5 / spacing^2``.
    """

    def __init__(self, centers=None, n_centers=64, g1=1.0, g2=None, prior_info=1.0,
                 batch_size=1, n_passes=5, schedule="const:1", random_state=None):
        self.centers = centers
        self.n_centers = n_centers
        self.g1 = g1
        self.g2 = g2
        self.prior_info = prior_info
        self.batch_size = batch_size
        self.n_passes = n_passes
        self.schedule = schedule
        self.random_state = random_state

    def _init_centers(self, X):
        if self.centers is not None:
            centers = np.asarray(self.centers, dtype=float)
        else:
            side = max(int(round(self.n_centers ** (1.0 / X.shape[1]))), 1)
            grids = [np.linspace(X[:, k].min(), X[:, k].max(), side) for k in range(X.shape[1])]
            centers = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, X.shape[1])
        if len(centers) > 1:
            d = np.sqrt(((centers[:, None] - centers[None]) ** 2).sum(-1))
            spacing = np.min(d[d > 0])
        else:
            spacing = 1.0
        self.centers_ = centers
        self.g2_ = self.g2 if self.g2 is not None else 0.5 / spacing ** 2

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if len(self.classes_) > 2:
            raise ValueError("occupancy classification is binary")
        self.n_features_in_ = X.shape[1]
        self._init_centers(X)
        m = len(self.centers_)
        self.coef_mean_ = np.zeros(m)
        self.coef_precision_ = np.full(m, float(self.prior_info))
        self.t_ = 0
        rng = check_random_state(self.random_state)
        for _ in range(self.n_passes):
            order = rng.permutation(len(X))
            self._stream(X[order], y[order])
        return self

    def partial_fit(self, X, y, classes=None):
        X, y = check_X_y(X, y)
        if not hasattr(self, "coef_mean_"):
            self.classes_ = unique_labels(classes if classes is not None else y)
            self.n_features_in_ = X.shape[1]
            self._init_centers(X)
            self.coef_mean_ = np.zeros(len(self.centers_))
            self.coef_precision_ = np.full(len(self.centers_), float(self.prior_info))
            self.t_ = 0
        self._stream(X, y)
        return self

    def _stream(self, X, y):
        labels = (y == self.classes_[-1]).astype(float)
        sched = make_schedule(self.schedule)
        phi = self.transform(X)
        mu, om = self.coef_mean_, self.coef_precision_
        for start in range(0, len(X), self.batch_size):
            sl = slice(start, start + self.batch_size)
            mu, om = diag_gvi_kernel(mu, om, LogisticLogLikelihood(phi[sl], labels[sl]),
                                     alpha=sched(self.t_, None))
            self.t_ += 1
        self.coef_mean_, self.coef_precision_ = mu, om

    def transform(self, X):
        """Kernel features of ``X``."""
        check_is_fitted(self, "centers_")
        X = check_array(X)
        return kernel_features(X, self.centers_, self.g1, self.g2_)

    def decision_function(self, X):
        return self.transform(X) @ self.coef_mean_

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


class DistributedLocalizer(BaseEstimator):
    """Run a relative-localization experiment and expose the agents' estimates.

    ``fit`` ignores ``X`` (the scenario generates its own data) and stores the
    per-round ``trace_``; ``predict`` returns each agent's position estimate.
    """

    def __init__(self, n_agents=8, topology="ring", b=1.0, estimator="marginal", n_rounds=200,
                 schedule="const:1", bp_alpha=0.8, seed=0):
        self.n_agents = n_agents
        self.topology = topology
        self.b = b
        self.estimator = estimator
        self.n_rounds = n_rounds
        self.schedule = schedule
        self.bp_alpha = bp_alpha
        self.seed = seed

    def fit(self, X=None, y=None):
        self.scenario_ = build_localization(self.n_agents, self.topology, self.b, seed=self.seed,
                                            bp_alpha=self.bp_alpha)
        self.trace_ = run_rounds(self.scenario_, self.estimator, make_schedule(self.schedule),
                                 self.n_rounds, self.seed)
        state = self.trace_.final_state
        self.positions_ = np.array([self.scenario_.own_marginal(self.estimator, state, i).mean
                                    for i in range(self.n_agents)])
        return self

    def predict(self, X=None):
        check_is_fitted(self, "positions_")
        return self.positions_

    def score(self, X=None, y=None):
        """Negative network-average position error."""
        check_is_fitted(self, "positions_")
        return -float(np.mean(np.linalg.norm(self.positions_ - self.scenario_.positions, axis=1)))
