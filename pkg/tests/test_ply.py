import numpy as np
import pytest

from partlift.errors import PipelineError
from partlift.geometry import PointCloud
from partlift.ply import load_ply, save_ply


def sample_cloud(n=50, colors=True, normals=True, seed=0):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.5, 0.5, (n, 3)).astype(np.float32).astype(np.float64)
    col = None
    if colors:
        col = (rng.integers(0, 256, (n, 3)) / 255.0).astype(np.float64)
    nrm = None
    if normals:
        raw = rng.normal(size=(n, 3))
        nrm = (raw / np.linalg.norm(raw, axis=1, keepdims=True)).astype(np.float32)
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pos, colors=col, normals=nrm)


@pytest.mark.parametrize("binary", [True, False])
@pytest.mark.parametrize("colors,normals", [(True, True), (True, False), (False, False)])
def test_round_trip(tmp_path, binary, colors, normals):
    cloud = sample_cloud(colors=colors, normals=normals)
    path = tmp_path / "c.ply"
    save_ply(path, cloud, binary=binary)
    loaded = load_ply(path)
    np.testing.assert_allclose(loaded.positions, cloud.positions, atol=1e-7)
    if colors:
        np.testing.assert_allclose(loaded.colors, cloud.colors, atol=1 / 255.0)
    else:
        assert loaded.colors is None
    if normals:
        np.testing.assert_allclose(loaded.normals, cloud.normals, atol=1e-6)
    else:
        assert loaded.normals is None


def test_binary_write_is_deterministic(tmp_path):
    cloud = sample_cloud()
    p1, p2 = tmp_path / "a.ply", tmp_path / "b.ply"
    save_ply(p1, cloud)
    save_ply(p2, cloud)
    assert p1.read_bytes() == p2.read_bytes()


def test_ascii_header_declares_format(tmp_path):
    cloud = sample_cloud(colors=False, normals=False)
    path = tmp_path / "c.ply"
    save_ply(path, cloud, binary=False)
    text = path.read_text()
    assert text.startswith("ply\nformat ascii 1.0\n")
    assert f"element vertex {cloud.n}" in text


def test_reads_double_precision_and_extra_properties(tmp_path):
    path = tmp_path / "c.ply"
    body = "\n".join(f"{x} 0.0 1.0 7" for x in (0.25, -1.5))
    path.write_text(
        "ply\nformat ascii 1.0\ncomment handmade\nelement vertex 2\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property int quality\nend_header\n" + body + "\n"
    )
    cloud = load_ply(path)
    np.testing.assert_allclose(cloud.positions[:, 0], [0.25, -1.5])
    assert cloud.colors is None


def test_rejects_non_ply(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("not a point cloud")
    with pytest.raises(PipelineError):
        load_ply(path)


def test_rejects_missing_coordinates(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
        "property float y\nend_header\n0 0\n"
    )
    with pytest.raises(PipelineError):
        load_ply(path)
