import numpy as np
import pytest

import moext


def test_metrics_worked_example():
    cm = [[2, 0], [1, 1]]
    assert moext.acc(cm) == 0.75
    assert moext.uf1(cm) == pytest.approx(11 / 15, abs=1e-12)
    assert moext.uar(cm) == pytest.approx(0.75, abs=1e-12)


def test_metrics_match_numpy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = int(rng.integers(2, 6))
        cm = rng.integers(1, 9, size=(c, c))
        tp = np.diag(cm).astype(float)
        recall = tp / cm.sum(axis=1)
        f1 = 2 * tp / (cm.sum(axis=1) + cm.sum(axis=0))
        assert moext.uar(cm.tolist()) == pytest.approx(recall.mean(), abs=1e-12)
        assert moext.uf1(cm.tolist()) == pytest.approx(f1.mean(), abs=1e-12)


def test_losses():
    a = np.random.default_rng(1).uniform(size=(2, 3, 4, 4))
    assert moext.reconstruction_loss(a, a) == 0.0
    assert moext.reconstruction_loss(a, a + 0.5) == pytest.approx(0.5)

    n, m, d = 2, 3, 5
    row = np.linspace(-1, 1, d)
    same = np.tile(row, (n * 2 * m, 1))
    assert moext.st_loss(same, same, row, n, m, epsilon=0.3) == pytest.approx(0.3, abs=1e-12)
    assert moext.ss_loss(same, n, m, epsilon=0.3) == pytest.approx(0.15, abs=1e-12)
    with pytest.raises(moext.MoextError):
        moext.ss_loss(same, n, m, epsilon=0.9)


def _texture(shift):
    import cv2

    rng = np.random.default_rng(3)
    base = cv2.GaussianBlur(rng.uniform(size=(128, 128)).astype(np.float32), (0, 0), 3)
    base = cv2.normalize(base, None, 0.2, 0.8, cv2.NORM_MINMAX)
    moved = cv2.warpAffine(base, np.float32([[1, 0, shift], [0, 1, 0]]), (128, 128), borderMode=cv2.BORDER_REFLECT)
    return np.repeat(moved[:, :, None], 3, axis=2)


def test_flow():
    u, v = moext.dense_flow(_texture(0), _texture(3))
    assert 2.5 <= float(u[20:108, 20:108].mean()) <= 3.5
    assert abs(float(v[20:108, 20:108].mean())) <= 0.5
    stats = moext.flow_stats([_texture(0)] * 3)
    assert [s[1] for s in stats] == [0.0, 0.0]


def test_synth_and_cli(tmp_path):
    counts = moext.synthesize(tmp_path / "raw", subjects=2, clips=3, classes=3, seed=4)
    assert counts == {"micro": 6, "macro": 0}
    rows = moext.load_manifest(tmp_path / "raw" / "manifest.csv")
    assert len(rows) == 6
    assert {r["subject"] for r in rows} == {"s01", "s02"}
    assert moext.run(["synth", "--bogus"]) == 2
    assert moext.run(["--out", str(tmp_path / "cli"), "synth", "--subjects", "2", "--clips", "2", "--log-level", "off"]) == 0
    assert len(moext.load_manifest(tmp_path / "cli" / "manifest.csv")) == 4
