import numpy as np
import pytest

from idsframe import baselines, cluster, ganomaly
from idsframe.baselines import KMeansOnly, OCSVMConfig, kmeans_only_detect, ocsvm_detect
from idsframe.cluster import ClusterModel
from idsframe.metrics import roc_auc
from idsframe.synthetic import contaminated_fixture, gaussian_normals


def _two_cluster_detector():
    assign = np.r_[np.zeros(90, int), np.ones(10, int)]
    model = ClusterModel(2, np.array([[0.0], [1.0]]), assign, np.array([90, 10]), np.zeros(100))
    return KMeansOnly(model), assign  # the small cluster is the anomalous one


def test_small_cluster_flagged():
    det, truth = _two_cluster_detector()
    pred = det.detect(50)
    assert pred.tolist() == truth.tolist()


def test_threshold_sentinels():
    det, truth = _two_cluster_detector()
    assert det.detect(0).sum() == 0
    assert det.detect(101).sum() == 100
    assert det.sweep_thresholds() == [0.0, 10.0, 90.0, 101.0]


def test_kmeans_roc_sweep(rng):
    X = np.vstack([rng.normal(0, 0.05, (90, 2)), rng.normal(3, 0.05, (10, 2))])
    truth = np.r_[np.zeros(90, int), np.ones(10, int)]
    res = kmeans_only_detect(X, 2, truth, seed=0)
    assert res.roc_points[0] == (0.0, 0.0) and res.roc_points[-1] == (1.0, 1.0)
    assert (0.0, 1.0) in res.roc_points
    assert res.auc == 1.0
    assert roc_auc(res.scores, truth)[1] == 1.0
    with pytest.raises(ValueError, match="ascending"):
        kmeans_only_detect(X, 2, truth, size_thresholds=[5, 1])


def test_kmeans_held_out_rows_take_training_cluster_size(rng):
    X = np.vstack([rng.normal(0, 0.05, (90, 2)), rng.normal(3, 0.05, (10, 2))])
    det = KMeansOnly.fit(X, 2)
    assert sorted(det.cluster_sizes_of(np.array([[0.0, 0.0], [3.0, 3.0]])).tolist()) == [10, 90]


def test_ocsvm_far_point_scores_higher(rng):
    train = rng.normal(0, 1, size=(500, 5))
    s = ocsvm_detect(train, np.vstack([np.zeros(5), np.full(5, 10 / np.sqrt(5))]))
    assert s[1] > s[0]
    outliers = rng.normal(0, 1, size=(50, 5))
    outliers /= np.linalg.norm(outliers, axis=1, keepdims=True) / 10
    assert ocsvm_detect(train, train).mean() < ocsvm_detect(train, outliers).mean()


def test_ocsvm_edge_cases():
    assert ocsvm_detect(np.random.default_rng(0).normal(size=(20, 3)), np.zeros((0, 3))).shape == (0,)
    with pytest.raises(ValueError, match="two distinct"):
        ocsvm_detect(np.ones((5, 3)), np.zeros((2, 3)))
    assert OCSVMConfig().nu == 0.1 and OCSVMConfig().gamma == "auto"


def test_ganomaly_alone_empty_test():
    _, sv = baselines.ganomaly_alone(gaussian_normals(50, 6), np.zeros((0, 6)), ganomaly.ScorerConfig(epochs=1))
    assert sv.raw.size == 0


def _filtered_vs_full(seed, contamination=True, epochs=10):
    X, y = contaminated_fixture(seed=seed, n_anomaly=100 if contamination else 0)
    Xt, yt = contaminated_fixture(seed=seed + 100)
    cfg = ganomaly.ScorerConfig(epochs=epochs, seed=seed)
    picked = cluster.select_probable_normals(cluster.fit_kmeans(X, 8, seed=seed), cluster.SelectionPolicy())
    filtered = ganomaly.train_scorer(X[picked], cfg)
    full, _ = baselines.ganomaly_alone(X, Xt, cfg)
    return roc_auc(filtered.score(Xt), yt)[1], roc_auc(full.score(Xt), yt)[1]


@pytest.mark.slow
def test_filtering_not_worse_on_contaminated_fixture():
    wins = sum(f >= u for f, u in (_filtered_vs_full(s) for s in range(5)))
    assert wins >= 4


@pytest.mark.slow
def test_no_contamination_variants_agree():
    f, u = _filtered_vs_full(0, contamination=False)
    assert abs(f - u) <= 0.05
