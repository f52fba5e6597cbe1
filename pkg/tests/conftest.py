import math
import sys
from pathlib import Path

import numpy as np
import pytest

from seqkitti import kernels
from seqkitti.datamodel import Box3D, BoxClass, CalibrationSet
from seqkitti.geometry import Transform

sys.path.insert(0, str(Path(__file__).parent))

IMPLS = [kernels.python_impl] + ([kernels.compiled_impl] if kernels.compiled_impl is not None else [])


@pytest.fixture(params=IMPLS, ids=lambda m: m.BACKEND)
def impl(request):
    return request.param


@pytest.fixture
def calib():
    return CalibrationSet.default_front()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_transform(rng, scale=100.0):
    return Transform.from_rt(random_rotation(rng), rng.uniform(-scale, scale, 3))


def random_box(rng, cls=None, score=False, extent=50.0):
    return Box3D(
        center=tuple(rng.uniform(-extent, extent, 3)),
        length=float(rng.uniform(0.3, 6.0)),
        width=float(rng.uniform(0.3, 3.0)),
        height=float(rng.uniform(0.3, 3.0)),
        heading=float(rng.uniform(-math.pi, math.pi)),
        cls=cls or BoxClass(rng.choice([c.value for c in BoxClass])),
        score=float(rng.uniform(0, 1)) if score else None,
    )


class _Criterion:
    def __init__(self, config, name):
        self.config, self.name, self.detail = config, name, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"[{status}] {self.name}" + (f" ({self.detail})" if self.detail else "")
        if exc_type is not None and exc is not None:
            line += f": {str(exc).splitlines()[0] if str(exc) else exc_type.__name__}"
        print(line)
        self.config.stash.setdefault(_ACCEPTANCE_KEY, []).append(line)
        return False


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``with criterion("name") as c: ...`` records one PASS/FAIL line for the summary."""
    return lambda name: _Criterion(request.config, name)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
