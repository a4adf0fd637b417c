import json
from pathlib import Path

import numpy as np
import pytest

from radiotwin.scene import load_scene
from radiotwin.spatial import build_spatial_index

REPO = Path(__file__).resolve().parents[1]
CANYON = REPO / "scenes" / "canyon.json"


@pytest.fixture(scope="session")
def canyon_scene():
    return load_scene(CANYON, default_frequency_hz=2e9)


@pytest.fixture(scope="session")
def canyon_index(canyon_scene):
    return build_spatial_index(canyon_scene)


def make_scene_json(buildings, bs=None, bounds=None, ground=None) -> str:
    doc = {"buildings": buildings, "bs_sites": bs or []}
    if bounds is not None:
        doc["bounds"] = bounds
    if ground is not None:
        doc["ground"] = ground
    return json.dumps(doc)


def box(bid, x0, y0, x1, y1, height, material=None):
    b = {
        "id": bid,
        "footprint": [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        "height": height,
    }
    if material is not None:
        b["material"] = material
    return b


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)
