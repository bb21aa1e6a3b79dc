import gzip
import struct

import numpy as np
import pytest

from treevade.bench import (
    BenchConfig,
    build_eval_set,
    emit_artifacts,
    load_mnist_subtask,
    random_ensemble,
    run_robustness,
    summarize,
    verify_report,
    write_pgm,
)
from treevade.boost import Dataset
from treevade.ensemble import Leaf, TreeEnsemble, predict_label


def write_idx_images(path, images: np.ndarray, magic: int = 0x803, gz: bool = False):
    n, pixels = images.shape
    side = int(np.sqrt(pixels))
    payload = struct.pack(">IIII", magic, n, side, side) + images.astype(np.uint8).tobytes()
    opener = gzip.open if gz else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def write_idx_labels(path, labels: np.ndarray, magic: int = 0x801, gz: bool = False):
    payload = struct.pack(">II", magic, len(labels)) + labels.astype(np.uint8).tobytes()
    opener = gzip.open if gz else open
    with opener(path, "wb") as fh:
        fh.write(payload)


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(30, 16), dtype=np.uint8)
    labels = np.array([2, 6, 3] * 10, dtype=np.uint8)
    img_path = tmp_path / "images-idx3-ubyte"
    lab_path = tmp_path / "labels-idx1-ubyte"
    write_idx_images(img_path, images)
    write_idx_labels(lab_path, labels)
    return img_path, lab_path, images, labels


def test_loader_filters_scales_and_maps_labels(idx_pair):
    img_path, lab_path, images, labels = idx_pair
    data = load_mnist_subtask(img_path, lab_path, 2, 6)
    keep = (labels == 2) | (labels == 6)
    assert len(data) == keep.sum() == 20
    assert data.X.min() >= 0.0 and data.X.max() <= 1.0
    np.testing.assert_allclose(data.X, images[keep] / 255.0)
    assert ((data.y == 1) == (labels[keep] == 2)).all()


def test_loader_reads_gzip(tmp_path, idx_pair):
    _, _, images, labels = idx_pair
    img_gz = tmp_path / "img.gz"
    lab_gz = tmp_path / "lab.gz"
    write_idx_images(img_gz, images, gz=True)
    write_idx_labels(lab_gz, labels, gz=True)
    data = load_mnist_subtask(img_gz, lab_gz, 2, 6)
    assert len(data) == 20


def test_loader_rejects_bad_magic(tmp_path, idx_pair):
    _, lab_path, images, _ = idx_pair
    bad = tmp_path / "bad-images"
    write_idx_images(bad, images, magic=0x999)
    with pytest.raises(ValueError, match="magic"):
        load_mnist_subtask(bad, lab_path, 2, 6)


def test_loader_rejects_truncated(tmp_path, idx_pair):
    img_path, lab_path, images, _ = idx_pair
    short = tmp_path / "short-images"
    short.write_bytes(img_path.read_bytes()[:-7])
    with pytest.raises(ValueError, match="truncated"):
        load_mnist_subtask(short, lab_path, 2, 6)


def test_loader_rejects_same_digits(idx_pair):
    img_path, lab_path, _, _ = idx_pair
    with pytest.raises(ValueError, match="differ"):
        load_mnist_subtask(img_path, lab_path, 2, 2)


def test_loader_at_full_dataset_scale(tmp_path):
    # synthetic pixels shaped like the real files: 60k/10k images of 28x28,
    # with the standard per-digit counts for classes 2 and 6 (5958+5918 train,
    # 1032+958 test); checks the filtering arithmetic end to end
    rng = np.random.default_rng(0)

    def build(n, n2, n6, img_name, lab_name):
        labels = np.full(n, 9, dtype=np.uint8)
        labels[:n2] = 2
        labels[n2:n2 + n6] = 6
        rng.shuffle(labels)
        images = rng.integers(0, 256, size=(n, 784), dtype=np.uint8)
        write_idx_images(tmp_path / img_name, images)
        write_idx_labels(tmp_path / lab_name, labels)
        return labels

    train_labels = build(60_000, 5958, 5918, "train-img", "train-lab")
    test_labels = build(10_000, 1032, 958, "test-img", "test-lab")

    train_set = load_mnist_subtask(tmp_path / "train-img", tmp_path / "train-lab", 2, 6)
    test_set = load_mnist_subtask(tmp_path / "test-img", tmp_path / "test-lab", 2, 6)
    assert len(train_set) == 11_876
    assert len(test_set) == 1_990
    assert (train_set.y == 1).sum() == (train_labels == 2).sum()
    assert (test_set.y == -1).sum() == (test_labels == 6).sum()


def zoo_and_eval(seed=1234, n_models=3, n_instances=10, n_features=4):
    # some zoos never agree on a label; bump the seed until one does
    while True:
        rng = np.random.default_rng(seed)
        models = {
            f"zoo{i}": random_ensemble(rng, n_trees=int(rng.integers(2, 5)),
                                       max_depth=2, n_features=n_features)
            for i in range(n_models)
        }
        X, y = [], []
        for _ in range(2000):
            x = rng.random(n_features)
            labels = {predict_label(m, x) for m in models.values()}
            if len(labels) == 1:
                X.append(x)
                y.append(labels.pop())
                if len(X) == n_instances:
                    return models, Dataset(X=np.array(X), y=np.array(y))
        seed += 1


def test_build_eval_set_perfect_model():
    rng = np.random.default_rng(2)
    X = rng.random((12, 3))
    y = np.where(X[:, 0] > 0.5, 1, -1)
    from treevade.ensemble import Internal, Predicate

    perfect = TreeEnsemble(trees=(Internal(Predicate(0, 0.5), Leaf(-1.0), Leaf(1.0)),),
                           n_features=3)
    test = Dataset(X=X, y=y)
    eval_set = build_eval_set([perfect], test, size=5)
    np.testing.assert_array_equal(eval_set.X, X[:5])


def test_build_eval_set_contradictory_models():
    always_pos = TreeEnsemble(trees=(Leaf(1.0),), n_features=2)
    always_neg = TreeEnsemble(trees=(Leaf(-1.0),), n_features=2)
    test = Dataset(X=np.random.default_rng(0).random((6, 2)),
                   y=np.array([1, -1, 1, -1, 1, -1]))
    with pytest.raises(ValueError, match="correctly classified"):
        build_eval_set([always_pos, always_neg], test, size=1)


def test_eval_set_members_verified():
    models, eval_set = zoo_and_eval()
    eval_from_builder = build_eval_set(list(models.values()), eval_set, len(eval_set))
    for model in models.values():
        for x, y in zip(eval_from_builder.X, eval_from_builder.y):
            assert predict_label(model, x) == y


def test_run_robustness_exact_sweep():
    models, eval_set = zoo_and_eval()
    report = run_robustness(models, eval_set, ["l0"], solver="exact",
                            config=BenchConfig(time_limit=10.0))
    assert set(report.results) == {(n, "l0") for n in models}
    total = sum(len(r.records) for r in report.results.values())
    assert total == len(models) * len(eval_set)
    for result in report.results.values():
        for rec in result.records:
            assert rec.outcome.status == "optimal"
        assert result.frequency is not None
    verify_report(report, models, eval_set)


def test_run_robustness_rejects_approx_non_l0():
    models, eval_set = zoo_and_eval()
    with pytest.raises(ValueError, match="approximate"):
        run_robustness(models, eval_set, ["l2"], solver="approx")
    with pytest.raises(ValueError, match="metric"):
        run_robustness(models, eval_set, ["l3"])
    with pytest.raises(ValueError, match="solver"):
        run_robustness(models, eval_set, ["l0"], solver="magic")


def test_approx_dominates_exact():
    models, eval_set = zoo_and_eval(seed=77, n_instances=8)
    exact = run_robustness(models, eval_set, ["l0"], solver="exact")
    approx = run_robustness(models, eval_set, ["l0"], solver="approx")
    for key in exact.results:
        for a, b in zip(approx.results[key].records, exact.results[key].records):
            if a.outcome.x_prime is None or b.outcome.x_prime is None:
                continue
            assert a.outcome.distance >= b.outcome.distance - 1e-9


def test_parallel_sweep_matches_serial():
    models, eval_set = zoo_and_eval(seed=9, n_instances=6)
    serial = run_robustness(models, eval_set, ["l1"],
                            config=BenchConfig(jobs=1))
    parallel = run_robustness(models, eval_set, ["l1"],
                              config=BenchConfig(jobs=4))
    for key in serial.results:
        a = [r.outcome.distance for r in serial.results[key].records]
        b = [r.outcome.distance for r in parallel.results[key].records]
        np.testing.assert_allclose(a, b)


def test_summary_statistics_recomputable():
    models, eval_set = zoo_and_eval(seed=31)
    report = run_robustness(models, eval_set, ["l2"])
    for result in report.results.values():
        assert summarize(result.distances()) == result.summary
        s = result.summary
        if s["count"]:
            assert s["min"] <= s["q25"] <= s["median"] <= s["q75"] <= s["max"]


def test_emit_artifacts(tmp_path):
    models, eval_set = zoo_and_eval(seed=5, n_instances=4, n_features=4)
    report = run_robustness(models, eval_set, ["l0"])
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    emit_artifacts(report, out_a, eval_set)
    emit_artifacts(report, out_b, eval_set)

    csv_a = (out_a / "outcomes.csv").read_bytes()
    assert csv_a == (out_b / "outcomes.csv").read_bytes()
    lines = csv_a.decode().strip().splitlines()
    assert lines[0] == "model,metric,instance_id,distance,status,wall_time"
    failures = sum(1 for r in report.results.values()
                   for rec in r.records if rec.outcome.x_prime is None)
    assert len(lines) - 1 == len(models) * len(eval_set) - failures
    assert (out_a / "summary.json").exists()
    # 4 features -> 2x2 images exist
    importance = list(out_a.glob("importance_*.pgm"))
    assert len(importance) == len(models)
    pairs = list(out_a.glob("evasion_*_orig.pgm"))
    assert len(pairs) == len(models) * len(eval_set) - failures


def test_single_outcome_csv_row(tmp_path):
    models, eval_set = zoo_and_eval(seed=6, n_instances=1, n_features=4)
    name = next(iter(models))
    report = run_robustness({name: models[name]}, eval_set, ["l0"])
    emit_artifacts(report, tmp_path, eval_set)
    lines = (tmp_path / "outcomes.csv").read_text().strip().splitlines()
    assert len(lines) == 2


def test_importance_map_orientation(tmp_path):
    # a feature modified in every evasion must render darker than an
    # untouched one (0 = always modified, 255 = never)
    models, eval_set = zoo_and_eval(seed=41, n_instances=5, n_features=4)
    name = next(iter(models))
    report = run_robustness({name: models[name]}, eval_set, ["l0"])
    emit_artifacts(report, tmp_path, eval_set)
    freq = report.results[(name, "l0")].frequency
    img = (tmp_path / f"importance_{name}_l0.pgm").read_bytes()
    pixels = np.frombuffer(img.split(b"255\n", 1)[1], dtype=np.uint8)
    peak = freq.max()
    if peak > 0:
        assert pixels[int(np.argmax(freq))] == 0
    untouched = np.flatnonzero(freq == 0)
    assert (pixels[untouched] == 255).all()


def test_zero_frequency_map_is_white(tmp_path):
    path = tmp_path / "white.pgm"
    write_pgm(path, np.full((2, 2), 255.0))
    data = path.read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n")
    assert data[-4:] == b"\xff\xff\xff\xff"

    # all-zero modification frequencies render as uniform white
    report_like = np.zeros(4)
    scale = report_like / 1
    img = (255.0 * (1.0 - scale)).reshape(2, 2)
    write_pgm(path, img)
    assert path.read_bytes()[-4:] == b"\xff\xff\xff\xff"
