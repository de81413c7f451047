import json
from pathlib import Path

import pytest

from tinyfusion.dataset_io import Annotation, BBox, Dataset, ImageRecord

FIXTURES = Path(__file__).resolve().parents[1] / "tinyfusion" / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def uniform_path() -> Path:
    return FIXTURES / "uniform.json"


@pytest.fixture
def golden_stats() -> str:
    return (GOLDEN / "uniform_stats.json").read_text(encoding="utf-8")


@pytest.fixture
def small_dataset() -> Dataset:
    images = (ImageRecord(1, 640, 512, "a.jpg"), ImageRecord(2, 320, 240))
    annotations = (
        Annotation(1, 1, BBox(10, 10, 16, 16)),
        Annotation(2, 1, BBox(100, 40, 30, 60)),
        Annotation(3, 2, BBox(4, 4, 8, 8), ignore=True),
    )
    return Dataset(images, annotations)


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path
    return _write
