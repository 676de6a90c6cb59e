import numpy as np
import pytest

from rlmoe.experts import EXPERTS, ExpertBundle, aggregate
from rlmoe.scene import SceneRecord
from rlmoe.textkit import tokenize


def make_scene(scene_id="s0", texts=None, reference="a red car near main street",
               d_in=128, seed=0, split="train", identity=None):
    texts = texts or {"traffic": "a red car", "signs": "stop sign ahead",
                      "pedestrian": "two people crossing", "environment": "near main street"}
    feats = tuple(float(x) for x in np.random.default_rng(seed).standard_normal(d_in))
    return SceneRecord(scene_id, identity or f"id-{scene_id}", split, feats, dict(texts),
                       reference)


def make_bundle(texts, alpha=(0.25, 0.25, 0.25, 0.25), scene_id="b0"):
    toks = {k: tokenize(texts.get(k.value, "")) for k in EXPERTS}
    return ExpertBundle(scene_id, toks, tuple(alpha), aggregate(toks, alpha))


@pytest.fixture
def scene():
    return make_scene()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
