import numpy as np
import pytest

from churn_recourse.data import FeatureMeta
from churn_recourse.errors import ConfigError, RecourseNotApplicableError
from churn_recourse.rgd import RgdConfig, rgd_batch, rgd_counterfactual
from churn_recourse.survival import (
    ChurnClassifier,
    ForestConfig,
    TreeNode,
    km_estimate,
)

E = True


def one_split_forest(threshold=0.5, n_features=3):
    """Single tree: feature 0 above the threshold means a long lifetime."""
    short = km_estimate([(float(t), E) for t in range(5, 11)])
    long = km_estimate([(float(t), E) for t in range(200, 301, 20)])
    root = TreeNode(
        feature=0,
        threshold=threshold,
        left=TreeNode(curve=short, n_samples=6, surv_at_horizon=short.probability_at(90)),
        right=TreeNode(curve=long, n_samples=6, surv_at_horizon=long.probability_at(90)),
    )
    return ChurnClassifier(
        trees=[root], threshold_days=90.0, n_features=n_features,
        config=ForestConfig(n_trees=1),
    )


FREE_META = [FeatureMeta(f"f{i}", True, "free", 0.0, 1.0) for i in range(3)]
TOY_CFG = RgdConfig(max_steps=50, step_size=0.5, fd_epsilon=0.3, seed=4)


def test_toy_forest_flip_crosses_threshold():
    clf = one_split_forest()
    x = np.array([0.2, 0.5, 0.5])
    action, (start, end) = rgd_counterfactual(clf, x, FREE_META, TOY_CFG, "u-far")
    assert action.post_class == 1
    assert action.counterfactual[0] > 0.5
    assert clf.classify(action.counterfactual) == 1  # success judged by the forest
    assert end >= start


def test_near_boundary_user_pays_less():
    clf = one_split_forest()
    far, _ = rgd_counterfactual(clf, np.array([0.2, 0.5, 0.5]), FREE_META, TOY_CFG, "far")
    near, _ = rgd_counterfactual(clf, np.array([0.48, 0.5, 0.5]), FREE_META, TOY_CFG, "near")
    assert far.post_class == near.post_class == 1
    assert near.cost_sq < far.cost_sq


def test_counterfactual_respects_bounds_and_masks():
    meta = [
        FeatureMeta("f0", True, "increase_only", 0.0, 1.0),
        FeatureMeta("f1", False, "free", 0.0, 1.0),
        FeatureMeta("f2", True, "free", 0.0, 1.0),
    ]
    clf = one_split_forest()
    action, _ = rgd_counterfactual(clf, np.array([0.3, 0.4, 0.5]), meta, TOY_CFG, "u")
    assert action.delta[1] == 0.0
    assert action.delta[0] >= 0.0
    assert np.all((action.counterfactual >= 0.0) & (action.counterfactual <= 1.0))


def test_rejects_retained_user():
    clf = one_split_forest()
    with pytest.raises(RecourseNotApplicableError):
        rgd_counterfactual(clf, np.array([0.9, 0.5, 0.5]), FREE_META, TOY_CFG, "kept")


def test_flat_landscape_denied_after_restarts():
    # tiny probes never see the distant split; restarts draw within 0.05 of x
    clf = one_split_forest()
    cfg = RgdConfig(max_steps=30, step_size=0.1, fd_epsilon=1e-4, seed=1, restart_scale=0.05)
    action, _ = rgd_counterfactual(clf, np.array([0.1, 0.5, 0.5]), FREE_META, cfg, "stuck")
    assert action.post_class == 0
    # the denied action carries the search's final iterate, still feasible
    assert np.all(np.abs(action.delta) <= 0.05 + 1e-12)
    assert np.all((action.counterfactual >= 0.0) & (action.counterfactual <= 1.0))


def test_deterministic_per_user_seed():
    clf = one_split_forest()
    cfg = RgdConfig(max_steps=40, step_size=0.3, fd_epsilon=0.2, seed=9)
    a, _ = rgd_counterfactual(clf, np.array([0.3, 0.2, 0.8]), FREE_META, cfg, "u1")
    b, _ = rgd_counterfactual(clf, np.array([0.3, 0.2, 0.8]), FREE_META, cfg, "u1")
    assert np.array_equal(a.delta, b.delta)
    assert a.post_class == b.post_class


def test_batch_shapes_and_methods():
    clf = one_split_forest()
    x = np.array([[0.2, 0.5, 0.5], [0.4, 0.1, 0.9]])
    actions, timings = rgd_batch(clf, x, ["a", "b"], FREE_META, TOY_CFG)
    assert len(actions) == len(timings) == 2
    assert all(a.method == "rgd" for a in actions)
    assert all(a.pre_class == 0 for a in actions)


def test_config_validation():
    with pytest.raises(ConfigError):
        RgdConfig(max_steps=0)
    with pytest.raises(ConfigError):
        RgdConfig(fd_epsilon=0.0)
    with pytest.raises(ConfigError):
        RgdConfig(step_size=0.0)
