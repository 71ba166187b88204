import pytest

from mfgen.loops import body_counts, build_nest, complete_cube_count, flatten, iterate_nest
from mfgen.mesh import Orientation, enumerate_elements, micro_vertices, MicroElement


def _as_tuples(els):
    return [(e.orientation, e.x, e.y, e.z) for e in els]


@pytest.mark.parametrize("strategy", ["sawtooth", "cubes"])
@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_flatten_equals_enumerate(strategy, level):
    assert flatten(build_nest(strategy, level)) == _as_tuples(enumerate_elements(strategy, 0, level))


def test_complete_cube_count_level_2():
    assert complete_cube_count(2) == 4
    assert body_counts(build_nest("cubes", 2))["complete"] == 4


def test_tail_never_contains_wd():
    for body, _ in iterate_nest(build_nest("cubes", 4)):
        if body.role != "complete":
            assert Orientation.WD not in body.orientations


def test_body_roles_and_orientation_counts():
    nest = build_nest("cubes", 3)
    for body, _ in iterate_nest(nest):
        n = {"complete": 6, "tail5": 5, "tail1": 1}[body.role]
        assert len(body.orientations) == n


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_complete_body_has_no_out_of_lattice_element(level):
    for body, (x, y, z) in iterate_nest(build_nest("cubes", level)):
        for o in body.orientations:
            micro_vertices(MicroElement(o, x, y, z, level))  # raises if outside


@pytest.mark.parametrize("level", [2, 3])
def test_short_rows(level):
    n = 2**level
    rows: dict = {}
    for body, (x, y, z) in iterate_nest(build_nest("cubes", level)):
        rows.setdefault((y, z), []).append(body.role)
    for (y, z), roles in rows.items():
        r = n - z - y
        if r == 1:
            assert roles == ["tail1"]
        elif r == 2:
            assert roles == ["tail5", "tail1"]
        else:
            assert roles == ["complete"] * (r - 2) + ["tail5", "tail1"]


def test_innermost_loop_is_batchable():
    for strategy in ("sawtooth", "cubes"):
        nest = build_nest(strategy, 2)
        spec = nest.roots[0]
        while spec.children and not hasattr(spec.children[0], "orientations"):
            spec = spec.children[0]
        assert spec.counter == "x"
    # the complete cubes loop is the batchable one
    y = build_nest("cubes", 2).roots[0].children[0]
    assert [c.batchable for c in y.children] == [True, False, False]


def test_unknown_strategy():
    with pytest.raises(ValueError):
        build_nest("spiral", 2)
