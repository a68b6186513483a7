"""Scenario parsing: defaults, echo, and rejection of malformed input."""
import copy
import json

import numpy as np
import pytest

from toposkms.errors import ScenarioError
from toposkms.scenario import (
    DEFAULT_CHECKS,
    load_scenario,
    parse_matrix,
    parse_operator,
)

MINIMAL = {
    "dim": 2,
    "state": {"matrix": [[0.5, 0], [0, 0.5]]},
    "contexts": {"Z": {"blocks": [{"diag": [1, 0]}, {"diag": [0, 1]}]}},
}


def scn_dict(**overrides):
    d = copy.deepcopy(MINIMAL)
    d.update(overrides)
    return d


def test_defaults_are_materialized_into_the_echo():
    scn = load_scenario(scn_dict())
    r = scn.resolved
    assert r["name"] == "scenario"
    assert r["seed"] == 0 and r["beta"] == 1.0
    assert r["convention"] == "hamiltonian"
    assert r["checks"] == DEFAULT_CHECKS
    assert r["poset"]["downward_closure"] and r["poset"]["meet_closure"]
    # every tolerance knob is echoed with its resolved value
    assert set(r["tolerances"]) == {"eps_herm", "eps_idem", "eps_eig",
                                    "eps_order", "eps_measure"}
    assert all(isinstance(v, float) for v in r["tolerances"].values())
    assert scn.group is None and scn.flow is None


def test_checks_are_deduplicated_and_put_in_canonical_order():
    scn = load_scenario(scn_dict(checks=["measure", "poset", "measure"]))
    assert scn.checks == ["poset", "measure"]
    with pytest.raises(ScenarioError, match="checks"):
        load_scenario(scn_dict(checks=["poset", "no-such-suite"]))


def test_pairs_default_to_all_ordered_subobject_pairs(tmp_path):
    d = scn_dict(
        projections={"E0": {"diag": [1, 0]}, "E1": {"diag": [0, 1]}},
        subobjects={"A": {"dasein": "E0"}, "B": {"dasein": "E1"}},
    )
    scn = load_scenario(d)
    assert sorted(map(tuple, scn.pairs)) == [("A", "B"), ("B", "A")]
    d["pairs"] = [["A", "missing"]]
    with pytest.raises(ScenarioError, match="pair"):
        load_scenario(d)


def test_complex_entries_parse_as_re_im_pairs():
    d = scn_dict(state={"matrix": [[0.7, [0.1, 0.15]], [[0.1, -0.15], 0.3]]})
    scn = load_scenario(d)
    assert scn.state.matrix[0, 1] == pytest.approx(0.1 + 0.15j)
    assert scn.state.matrix[1, 0] == pytest.approx(0.1 - 0.15j)


def test_dim_validation():
    for bad in (None, 1, True, 2.0, "3"):
        with pytest.raises(ScenarioError, match="dim"):
            load_scenario(scn_dict(dim=bad) if bad is not None else
                          {k: v for k, v in MINIMAL.items() if k != "dim"})
    with pytest.raises(ScenarioError, match="maximum"):
        load_scenario(scn_dict(dim=17))


def test_unknown_tolerance_key_is_rejected():
    with pytest.raises(ScenarioError, match="tolerance"):
        load_scenario(scn_dict(tolerances={"eps_bogus": 1e-9}))
    scn = load_scenario(scn_dict(tolerances={"eps_measure": 1e-6}))
    assert scn.tol.eps_measure == 1e-6
    assert scn.resolved["tolerances"]["eps_measure"] == 1e-6


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(str(tmp_path / "nope.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ScenarioError, match="malformed JSON"):
        load_scenario(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ScenarioError, match="root must be an object"):
        load_scenario(str(arr))


def test_state_alternatives_and_failures():
    pure = load_scenario(scn_dict(state={"pure": [1, 0]}))
    assert pure.state.matrix[0, 0] == pytest.approx(1.0)
    spec = load_scenario(scn_dict(state={"spectrum": [0.25, 0.75]}))
    assert np.allclose(np.diag(spec.state.matrix), [0.25, 0.75])
    with pytest.raises(ScenarioError, match="state"):
        load_scenario(scn_dict(state={"matrix": [[1.0, 0], [0, 1.0]]}))  # trace 2
    with pytest.raises(ScenarioError, match="gibbs"):
        load_scenario(scn_dict(state={"gibbs": True}))  # no hamiltonian
    with pytest.raises(ScenarioError, match="state"):
        load_scenario(scn_dict(state={}))


def test_matrix_parsing_rejects_bad_shapes():
    with pytest.raises(ScenarioError, match="ragged"):
        parse_matrix([[1, 0], [0]], "m")
    with pytest.raises(ScenarioError, match="square"):
        parse_matrix([[1, 0, 0], [0, 1, 0]], "m")
    with pytest.raises(ScenarioError, match="expected 3"):
        parse_matrix([[1, 0], [0, 1]], "m", dim=3)
    with pytest.raises(ScenarioError, match="diag"):
        parse_operator({"diag": [1, 0]}, "m", dim=3)
    with pytest.raises(ScenarioError, match="pair"):
        parse_matrix([[[1, 2, 3], 0], [0, 1]], "m")


def test_context_validation_failures():
    with pytest.raises(ScenarioError, match="unknown projection"):
        load_scenario(scn_dict(contexts={"V": {"blocks": ["nope"]}}))
    with pytest.raises(ScenarioError, match="invalid"):
        load_scenario(scn_dict(
            contexts={"V": {"blocks": [{"diag": [1, 0]}, {"diag": [1, 0]}]}}))
    with pytest.raises(ScenarioError, match="'blocks' or 'generated_by'"):
        load_scenario(scn_dict(contexts={"V": {}}))


def test_group_requires_a_hamiltonian():
    with pytest.raises(ScenarioError, match="hamiltonian"):
        load_scenario(scn_dict(group={"samples": [0.0]}))


def test_named_stages_must_exist_in_the_poset():
    with pytest.raises(ScenarioError, match="c2_context"):
        load_scenario(scn_dict(c2_context="Vmissing"))
    with pytest.raises(ScenarioError, match="truth_stage"):
        load_scenario(scn_dict(truth_stage="Vmissing"))


def test_environment_cap_overrides_the_scenario_cap():
    d = scn_dict(
        dim=3,
        state={"matrix": [[0.5, 0, 0], [0, 0.3, 0], [0, 0, 0.2]]},
        contexts={"D": {"blocks": [{"diag": [1, 0, 0]}, {"diag": [0, 1, 0]},
                                   {"diag": [0, 0, 1]}]}},
    )
    assert len(load_scenario(d).poset.contexts) == 4
    with pytest.raises(ScenarioError, match="poset construction failed"):
        load_scenario(d, max_contexts_env="3")
    with pytest.raises(ScenarioError, match="integer"):
        load_scenario(d, max_contexts_env="three")


def test_full_corpus_parses(scenario_dir):
    for path in sorted(scenario_dir.glob("*.json")):
        scn = load_scenario(str(path))
        assert scn.dim >= 2
        assert scn.resolved["poset"]["size"] == len(scn.poset.contexts)
        # the echo round-trips through JSON
        assert json.loads(json.dumps(scn.resolved)) == scn.resolved
