import numpy as np
import pytest

from distortlab.datasets import (
    DatasetRecord,
    canonicalize_scores,
    load_manifest,
    write_manifest,
)
from distortlab.errors import InputDomainError, ManifestError, ShapeError
from distortlab.imageio import save_pgm
from distortlab.noise import NoiseStream


def _write_images(tmp_path, n=3, shape=(6, 6)):
    names = []
    for i in range(n):
        g = NoiseStream(100 + i).uniforms(shape[0] * shape[1]).reshape(shape)
        name = f"img{i}.pgm"
        save_pgm(g, tmp_path / name)
        names.append(name)
    return names


def test_record_validation():
    with pytest.raises(ShapeError):
        DatasetRecord(np.zeros((4, 4)), np.zeros((5, 5)), 1.0)
    with pytest.raises(InputDomainError):
        DatasetRecord(np.zeros((4, 4)), np.zeros((4, 4)), float("nan"))


def test_manifest_round_trip(tmp_path):
    imgs = _write_images(tmp_path)
    write_manifest(
        tmp_path / "m.csv",
        [(imgs[0], imgs[1], 1.5), (imgs[0], imgs[2], 2.5)],
    )
    records, polarity = load_manifest(tmp_path / "m.csv")
    assert polarity == "distortion"
    assert len(records) == 2
    assert records[0].score == 1.5


def test_manifest_quality_polarity_canonicalizes_by_negation(tmp_path):
    imgs = _write_images(tmp_path)
    write_manifest(tmp_path / "m.csv", [(imgs[0], imgs[1], 4.0)], polarity="quality")
    records, polarity = load_manifest(tmp_path / "m.csv")
    assert polarity == "quality"
    canonical = canonicalize_scores(records, polarity)
    assert canonical[0].score == -4.0


def test_manifest_rejects_duplicates_with_row_numbers(tmp_path):
    imgs = _write_images(tmp_path)
    with open(tmp_path / "m.csv", "w") as fh:
        fh.write("ref,dist,score\n")
        fh.write(f"{imgs[0]},{imgs[1]},1.0\n")
        fh.write(f"{imgs[0]},{imgs[1]},2.0\n")
    with pytest.raises(ManifestError) as err:
        load_manifest(tmp_path / "m.csv")
    assert "row 3" in str(err.value)


def test_manifest_rejects_nonfinite_scores(tmp_path):
    imgs = _write_images(tmp_path)
    with open(tmp_path / "m.csv", "w") as fh:
        fh.write("ref,dist,score\n")
        fh.write(f"{imgs[0]},{imgs[1]},inf\n")
    with pytest.raises(ManifestError) as err:
        load_manifest(tmp_path / "m.csv")
    assert "row 2" in str(err.value)


def test_manifest_rejects_bad_header(tmp_path):
    _write_images(tmp_path)
    (tmp_path / "m.csv").write_text("reference,distorted,mos\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.csv")


def test_manifest_rejects_unknown_metadata(tmp_path):
    (tmp_path / "m.csv").write_text("#units=cd/m2\nref,dist,score\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.csv")


def test_manifest_paths_relative_to_manifest(tmp_path):
    sub = tmp_path / "data"
    sub.mkdir()
    imgs = _write_images(sub)
    write_manifest(sub / "m.csv", [(imgs[0], imgs[1], 1.0)])
    records, _ = load_manifest(sub / "m.csv")
    assert records[0].reference.shape == (6, 6)


def test_mismatched_image_sizes_reported_with_row(tmp_path):
    a = tmp_path / "a.pgm"
    b = tmp_path / "b.pgm"
    save_pgm(np.zeros((4, 4)), a)
    save_pgm(np.zeros((5, 5)), b)
    write_manifest(tmp_path / "m.csv", [("a.pgm", "b.pgm", 1.0)])
    with pytest.raises(ManifestError) as err:
        load_manifest(tmp_path / "m.csv")
    assert "row" in str(err.value)
