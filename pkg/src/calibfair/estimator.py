"""scikit-learn style wrapper around the post-processing pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_score_input
from .geometry import DecisionPolicy
from .pipeline import choose_targets, map_to_support
from .rates import PenaltySpec
from .scores import Samples, calibrate_bins
from .transport import TransportProblemSpec, apply_kernel, draw_uniforms, solve_kernel

__all__ = ["EqualErrorRatePostProcessor"]


class EqualErrorRatePostProcessor(TransformerMixin, BaseEstimator):
    """Post-process group-labelled risk scores into a calibrated score with equal error rates.

    Parameters
    ----------
    k : float, default=10
        Cost of a false positive relative to a false negative; sets the cutoff
        ``k / (k + 1)``.  Ignored when ``cutoff`` is given.
    cutoff : float, optional
        Classification cutoff in (0, 1).
    epsilon : float, default=0
        Half-width of the cutoff interval kept free of output scores.
    n_bins : int, default=50
        Grid used to discretise input scores.
    mode : {"basic", "flexible"}
        ``basic`` enforces identical rates; ``flexible`` trades loss against a
        quadratic disparity penalty.
    penalty : {"equal-odds", "equal-tpr", "none"} or 2x2 array, default="equal-odds"
        Disparity penalty matrix (flexible mode only).
    gamma : float, optional
        Weight on the low-base-rate group's loss (flexible mode, two groups);
        defaults to the empirical group shares.
    random_state : int, default=0
        Seed of the randomised score mapping.

    Attributes
    ----------
    policy_, distributions_, target_, kernels_, groups_, shares_, feasibility_
    """

    def __init__(
        self,
        k: float = 10.0,
        cutoff: float | None = None,
        epsilon: float = 0.0,
        n_bins: int = 50,
        mode: str = "basic",
        penalty="equal-odds",
        gamma: float | None = None,
        random_state: int = 0,
    ):
        self.k = k
        self.cutoff = cutoff
        self.epsilon = epsilon
        self.n_bins = n_bins
        self.mode = mode
        self.penalty = penalty
        self.gamma = gamma
        self.random_state = random_state

    def _policy(self) -> DecisionPolicy:
        if self.cutoff is not None:
            return DecisionPolicy(float(self.cutoff), float(self.epsilon))
        return DecisionPolicy.from_k(float(self.k), float(self.epsilon))

    def _penalty(self) -> PenaltySpec:
        if isinstance(self.penalty, str):
            return PenaltySpec.preset(self.penalty, self.gamma)
        return PenaltySpec(np.asarray(self.penalty, dtype=float), self.gamma)

    def fit(self, X, y, groups):
        scores, y, groups = check_score_input(X, y, groups)
        if self.mode not in ("basic", "flexible"):
            raise ValueError(f"mode must be 'basic' or 'flexible', got {self.mode!r}")
        samples = Samples(scores, y, groups)
        if len(samples.group_labels) < 2:
            raise ValueError("need at least two groups")
        self.policy_ = self._policy()
        self.distributions_ = calibrate_bins(samples, self.n_bins)
        self.shares_ = samples.shares()
        self.target_, self.feasibility_, self.predicted_loss_ = choose_targets(
            self.distributions_, self.policy_, self.mode, self._penalty(), self.shares_
        )
        self.kernels_ = {
            g: solve_kernel(TransportProblemSpec(d, self.target_.rate(g), self.policy_))
            for g, d in self.distributions_.items()
        }
        self.groups_ = np.array(list(self.distributions_))
        self.n_features_in_ = 1
        return self

    def transform(self, X, groups):
        """Randomised post-processed scores (deterministic given ``random_state``)."""
        check_is_fitted(self, "kernels_")
        scores, _, groups = check_score_input(X, None, groups)
        unknown = np.setdiff1d(np.unique(groups), self.groups_)
        if unknown.size:
            raise ValueError(f"groups not seen during fit: {unknown.tolist()}")
        u = draw_uniforms(self.random_state, scores.size)
        out = np.empty(scores.size)
        for g, kern in self.kernels_.items():
            m = groups == g
            if not m.any():
                continue
            pts = map_to_support(self.distributions_[g], scores[m], self.n_bins)
            out[m] = apply_kernel(kern, pts, self.random_state, uniforms=u[m]).scores
        return out

    def fit_transform(self, X, y=None, groups=None, **fit_params):
        return self.fit(X, y, groups).transform(X, groups)

    def predict(self, X, groups):
        """Cutoff classification of the post-processed scores."""
        return self.policy_.classify(self.transform(X, groups))

    def calibrated_scores(self, X, groups):
        """Per-group recalibrated input scores (before the randomised mapping)."""
        check_is_fitted(self, "kernels_")
        scores, _, groups = check_score_input(X, None, groups)
        out = np.empty(scores.size)
        for g, d in self.distributions_.items():
            m = groups == g
            if m.any():
                out[m] = d.values[map_to_support(d, scores[m], self.n_bins)]
        return out
