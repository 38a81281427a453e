import numpy as np
import pytest

from esfem.mesh import DimensionMode, generate_structured_mesh, perturb_interior_nodes

CYL = DimensionMode.CYLINDRICAL_2D
CART = DimensionMode.CARTESIAN_3D


def build_corpus():
    """Regular and perturbed meshes in both modes, small enough for the
    per-domain oracle."""
    meshes = {}
    for div, ext in [(1, None), (2, None), ((3, 2), [[0.0, 0.0], [1.5, 1.0]]),
                     (4, [[0.25, -1.0], [1.25, 0.5]]), ((5, 3), [[0.0, 0.0], [2.0, 3.0]]),
                     (6, None)]:
        meshes[f"cyl-{div}"] = generate_structured_mesh(CYL, div, ext)
    for name, seed, mag in [("cyl-(3, 2)", 1, 0.2), ("cyl-4", 2, 0.3), ("cyl-(5, 3)", 3, 0.45),
                            ("cyl-6", 4, 0.2)]:
        meshes[f"{name}-p{seed}"] = perturb_interior_nodes(meshes[name], mag, seed)
    for div, ext in [(1, None), (2, None), (3, None), ((2, 3, 2), [[0, 0, 0], [1.0, 2.0, 0.5]]),
                     (4, [[-1, -1, -1], [1, 1, 1]])]:
        meshes[f"cube-{div}"] = generate_structured_mesh(CART, div, ext)
    for name, seed, mag in [("cube-2", 5, 0.3), ("cube-3", 6, 0.2), ("cube-3", 7, 0.45),
                            ("cube-(2, 3, 2)", 8, 0.3), ("cube-4", 9, 0.2)]:
        meshes[f"{name}-p{seed}"] = perturb_interior_nodes(meshes[name], mag, seed)
    return meshes


@pytest.fixture(scope="session")
def corpus():
    return build_corpus()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: ``acceptance(criterion, passed, detail)``."""
    log = request.config.stash[_ACCEPTANCE]

    def record(criterion, passed, detail):
        log.append((criterion, bool(passed), detail))
        print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in log:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
