import json
import math

import numpy as np
import pytest
from shapely.geometry import Point

import st3d


def shapely_iou(x1, y1, r1, x2, y2, r2):
    a = Point(x1, y1).buffer(r1, quad_segs=4096)
    b = Point(x2, y2).buffer(r2, quad_segs=4096)
    return a.intersection(b).area / a.union(b).area


@pytest.mark.parametrize(
    "c1,c2",
    [
        ((0, 0, 1), (1, 0, 1)),
        ((0, 0, 112), (80, 60, 90)),
        ((5, -3, 2), (5.5, -3, 0.5)),
        ((0, 0, 1), (3, 0, 1)),
    ],
)
def test_circle_iou_matches_polygon_area(c1, c2):
    assert st3d.circle_iou(*c1, *c2) == pytest.approx(shapely_iou(*c1, *c2), abs=1e-5)


def test_circle_iou_rejects_bad_radius():
    with pytest.raises(st3d.GeometryError):
        st3d.circle_iou(0, 0, 0, 1, 1, 1)


def test_cosine_and_cross_weight():
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=6), rng.normal(size=6)
    cos = u @ v / np.linalg.norm(u) / np.linalg.norm(v)
    assert st3d.cosine_similarity(u, v) == pytest.approx(cos, abs=1e-12)
    w = st3d.cross_layer_weight(0, 0, 100, u, 50, 0, 100, v)
    assert w == pytest.approx(shapely_iou(0, 0, 100, 50, 0, 100) + cos, abs=1e-5)
    with pytest.raises(st3d.DegenerateFeatureError):
        st3d.cosine_similarity(np.zeros(3), v[:3])


def test_metrics_match_numpy():
    rng = np.random.default_rng(7)
    p, t = rng.normal(size=(30, 5)), rng.normal(size=(30, 5))
    pcc = np.mean([np.corrcoef(p[:, g], t[:, g])[0, 1] for g in range(5)])
    assert st3d.metric_pcc(p, t) == pytest.approx(pcc, abs=1e-12)
    assert st3d.metric_mse(p, t) == pytest.approx(np.mean((p - t) ** 2), abs=1e-12)
    assert st3d.metric_mae(p, t) == pytest.approx(np.mean(np.abs(p - t)), abs=1e-12)


def small_spec(seed):
    spec = st3d.SyntheticSpec()
    spec.layers, spec.spots_per_layer, spec.genes, spec.seed = 3, 30, 6, seed
    return spec


def test_synthetic_stack_and_graphs():
    s = st3d.generate_synthetic(small_spec(1))
    assert s.spot_count == 90
    assert s.expression.shape == (90, 6)
    assert s.validate() == []
    g = st3d.build_3d_graph(s, k_intra=4, k_cross=5)
    assert g["node_count"] == 90
    src, dst, kind = np.array(g["src"]), np.array(g["dst"]), np.array(g["kind"])
    layers = np.array(s.row_layers)
    same = layers[src] == layers[dst]
    assert np.all(same == (kind == "intra_layer"))
    assert np.all(np.bincount(src[same], minlength=90) == 4)
    assert np.all(np.bincount(src[~same], minlength=90) <= 5)
    g2 = st3d.build_2d_graph(s, k=3)
    assert set(g2["kind"]) == {"intra_layer"}


def test_propagation_keeps_known_rows():
    s = st3d.generate_synthetic(small_spec(2))
    known = [i < 10 for i in range(s.spot_count)]
    pred, prov = st3d.propagate(s, known)
    assert np.array_equal(pred[:10], s.expression[:10])
    assert prov[:10] == ["known"] * 10
    assert set(prov[10:]) <= {"propagated", "unreached"}


def test_dataset_round_trip(tmp_path):
    stacks = [st3d.generate_synthetic(small_spec(seed)) for seed in (4, 5)]
    manifest = st3d.save_dataset(stacks, tmp_path)
    back = st3d.load_dataset(manifest)
    assert [b.sample_id for b in back] == [s.sample_id for s in stacks]
    for a, b in zip(stacks, back):
        assert np.allclose(a.expression, b.expression, rtol=1e-8)


def test_experiment_is_reproducible():
    stacks = [st3d.generate_synthetic(small_spec(seed)) for seed in range(4)]
    runs = [st3d.run_experiment(stacks, method="propagation_only", n_folds=2, seed=9) for _ in range(2)]
    assert runs[0] == runs[1]
    report = json.loads(runs[0])
    assert len(report["folds"]) == 2
    assert math.isfinite(report["aggregate"]["pcc"])
    with pytest.raises(st3d.UsageError):
        st3d.run_experiment(stacks, method="nonsense")
