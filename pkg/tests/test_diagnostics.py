import numpy as np
import pytest

from rnalab.data import BenchmarkConfig, Mode, MultiModalBatch, make_benchmark
from rnalab.diagnostics import (
    DROP_COLUMNS,
    DROP_ROWS,
    dimension_profile,
    features,
    modality_drop_experiment,
    norm_report,
    relevance_scores,
    top_k_indices,
    topk_norm_fraction,
    weaker_stream,
)
from rnalab.errors import ConfigError
from rnalab.model import LayerConfig, init_model
from rnalab.trainer import StepSchedule, TrainConfig

D = 4


def identity_model():
    m = init_model(0, LayerConfig(dim_v=D, dim_a=D, hidden=(), feature_dim=D, class_count=3, feature_relu=False))
    for s in ("v", "a"):
        m.encoder(s).layers[0].weight.values = np.eye(D)
    return m


def rows(v_row, a_row, n=5, domains=None):
    domains = np.zeros(n, int) if domains is None else np.asarray(domains)
    return MultiModalBatch(np.tile(v_row, (n, 1)).astype(float), np.tile(a_row, (n, 1)).astype(float),
                           np.zeros(n, int), domains)


def test_identity_encoder_report():
    report = norm_report(identity_model(), rows([3, 4, 0, 0], [0, 0, 6, 8]), k=2)
    st = report.per_domain["visual"][0]
    assert (st.mean, st.std, st.min, st.max, st.n) == (5.0, 0.0, 5.0, 5.0, 5)
    assert report.mean_norm == {"visual": 5.0, "audio": 10.0}
    assert report.delta == abs(report.mean_norm["visual"] - report.mean_norm["audio"]) == 5.0
    assert report.ratio == 2.0
    assert report.histogram["visual"] == [3.0, 4.0, 0.0, 0.0]


def test_per_domain_grouping():
    data = rows([3, 4, 0, 0], [1, 0, 0, 0], n=4, domains=[0, 0, 1, 1])
    data.x_v[2:] *= 2
    report = norm_report(identity_model(), data)
    assert report.per_domain["visual"][0].mean == 5.0
    assert report.per_domain["visual"][1].mean == 10.0
    assert [r["domain"] for r in report.rows() if r["modality"] == "visual"] == [0, 1]


def test_topk_constructed_single_column():
    m = identity_model()
    m.classifier_v.weight.values = np.zeros((D, 3))
    m.classifier_v.weight.values[2] = [0.0, -1.5, 0.0]  # only feature dim 2 matters
    data = rows([1, 2, 3, 4], [1, 1, 1, 1])
    fv, _ = topk_norm_fraction(m, data, 1)
    assert fv == pytest.approx(3 / 10)


def test_topk_full_k_is_one_and_monotone():
    split = make_benchmark(BenchmarkConfig(train_per_domain=50, test_per_domain=100), 0, Mode.DG)
    m = init_model(0)
    d = m.config.feature_dim
    fv, fa = topk_norm_fraction(m, split.target.test, d)
    assert fv == 1.0 and fa == 1.0
    curve = [topk_norm_fraction(m, split.target.test, k) for k in range(1, d + 1)]
    for (v0, a0), (v1, a1) in zip(curve, curve[1:]):
        assert v1 >= v0 and a1 >= a0
    with pytest.raises(ConfigError):
        topk_norm_fraction(m, split.target.test, 0)
    with pytest.raises(ConfigError):
        topk_norm_fraction(m, split.target.test, d + 1)


def test_histogram_shared_with_topk():
    split = make_benchmark(BenchmarkConfig(train_per_domain=50, test_per_domain=100), 0, Mode.DG)
    m, data = init_model(1), split.target.test
    report = norm_report(m, data, k=5)
    feats = features(m, data)
    for s, name in (("v", "visual"), ("a", "audio")):
        profile = dimension_profile(feats[name])
        assert report.histogram[name] == profile.tolist()
        top = top_k_indices(relevance_scores(m, s), 5)
        assert report.topk_fraction[name] == profile[np.sort(top)].sum() / profile.sum()
    assert norm_report(m, data, k=5).to_dict() == report.to_dict()


def test_relevance_and_tie_rule():
    m = identity_model()
    m.classifier_v.weight.values = np.array([[1.0, -1.0, 0], [0, 0, 2.0], [0.5, 0.5, 0.5], [3.0, 0, 0]])
    assert relevance_scores(m, "v").tolist() == [2.0, 2.0, 1.5, 3.0]
    assert relevance_scores(m, "v", "linf").tolist() == [1.0, 2.0, 0.5, 3.0]
    assert top_k_indices(relevance_scores(m, "v"), 3).tolist() == [3, 0, 1]
    with pytest.raises(ConfigError):
        relevance_scores(m, "v", "l2")


def test_collapsed_stream_gives_infinite_ratio():
    m = identity_model()
    report = norm_report(m, rows([3, 4, 0, 0], [0, 0, 0, 0]))
    assert report.ratio == float("inf")


def test_modality_drop_schema():
    split = make_benchmark(BenchmarkConfig(train_per_domain=150, test_per_domain=100), 0, Mode.DG)
    cfg = TrainConfig(iterations=30, batch_size=32, lr_v=StepSchedule(0.03), lr_a=StepSchedule(0.03))
    table = modality_drop_experiment(cfg, split)
    assert [r["run"] for r in table] == list(DROP_ROWS)
    assert all(set(r) == {"run", *DROP_COLUMNS} for r in table)
    assert weaker_stream(table) in ("v", "a")
    with pytest.raises(ConfigError):
        modality_drop_experiment(cfg, make_benchmark(BenchmarkConfig(train_per_domain=50), 0, Mode.UDA))
