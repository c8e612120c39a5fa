import numpy as np
import pytest

from hpomdp.domain import (ConceptGraph, Dataset, HPOMDPModel, ObservationFunction, PatternComponent,
                           StateSpace, Trajectory, build_state_space, make_questions, validate_model)
from hpomdp.exceptions import CapacityError, ContractError, StructuralError

from conftest import chain2, toy1


def test_graph_rejects_cycles_and_unknown_endpoints():
    with pytest.raises(StructuralError):
        ConceptGraph(["a", "b"], {("a", "b"), ("b", "a")})
    with pytest.raises(StructuralError):
        ConceptGraph(["a"], {("a", "z")})
    with pytest.raises(StructuralError):
        ConceptGraph(["a", "a"])
    with pytest.raises(StructuralError):
        ConceptGraph([])


def test_graph_parents_and_children():
    g = ConceptGraph(["X", "Z", "Y"], {("X", "Z"), ("X", "Y")})
    assert g.parents("Z") == ("X",)
    assert g.children("X") == ("Y", "Z")
    assert g.edge_indices() == [(0, 1), (0, 2)]


def test_state_space_modes_and_order():
    g = ConceptGraph(["A", "B"], {("A", "B")})
    assert build_state_space(g, "full") == [(0, 0), (0, 1), (1, 0), (1, 1)]
    # (0, 1) masters B without its prerequisite A
    assert build_state_space(g, "filtered") == [(0, 0), (1, 0), (1, 1)]
    with pytest.raises(ContractError):
        build_state_space(g, "partial")


def test_state_space_capacity_guard():
    with pytest.raises(CapacityError):
        build_state_space(ConceptGraph([f"c{i}" for i in range(21)]))


def test_flip_table_respects_prerequisites():
    space = StateSpace(ConceptGraph(["A", "B"], {("A", "B")}))
    # from (0,0) mastering B is infeasible; mastering A leads to (1,0)
    assert space.flip[1, space.index((0, 0))] == -1
    assert space.flip[0, space.index((0, 0))] == space.index((1, 0))
    assert space.flip[1, space.index((1, 0))] == space.index((1, 1))
    assert space.flip[0, space.index((1, 1))] == -1


def test_transition_tables_are_row_stochastic_and_single_flip():
    space = StateSpace(ConceptGraph(["A", "B", "C"], {("A", "B")}), "full")
    t = space.transition_tables(np.array([0.3, 0.6, 0.9]))
    np.testing.assert_allclose(t.sum(axis=2), 1.0)
    for c in range(3):
        for s, state in enumerate(space.states):
            for r, nxt in enumerate(space.states):
                if t[c, s, r] > 0 and r != s:
                    diff = [i for i in range(3) if state[i] != nxt[i]]
                    assert diff == [c] and nxt[c] == 1


def test_learn_probabilities_round_trip():
    space = StateSpace(ConceptGraph(["A", "B"], {("A", "B")}))
    comp = PatternComponent.from_learn_probabilities(space, [1, 0, 0], [0.25, 0.75])
    np.testing.assert_array_equal(comp.learn_probabilities(space), [0.25, 0.75])


def test_valid_models_have_no_violations():
    assert validate_model(toy1()) == []
    assert validate_model(chain2(mode="full")) == []


def test_validate_flags_bad_rows_constraint_3_and_constraint_1():
    model = toy1()
    space = model.space
    bad = np.array(model.components[0].transition)
    bad[0, 1] = [0.1, 0.9]           # forgetting: mastered -> unmastered
    comp = PatternComponent([0.6, 0.4], bad)
    names = {v.invariant for v in validate_model(model.replace(components=(comp,)))}
    assert "constraint-3" in names

    short = np.array(model.components[0].transition)
    short[0, 0] = [0.5, 0.0]
    names = {v.invariant for v in validate_model(model.replace(components=(PatternComponent([0.6, 0.4], short),)))}
    assert "row-stochastic" in names

    names = {v.invariant for v in validate_model(model.replace(observation=ObservationFunction([0.9], [0.2])))}
    assert "constraint-1" in names
    assert space is model.space


def test_validate_checks_table_mode_constraint_1():
    model = toy1().replace(observation=ObservationFunction([0.2], [0.9], table=[[0.7, 0.6]]))
    assert [v.invariant for v in validate_model(model)] == ["constraint-1"]


def test_trajectory_validation():
    with pytest.raises(ContractError):
        Trajectory("s", ())
    with pytest.raises(ContractError):
        Trajectory("s", (("q", 2),))
    tr = Trajectory(7, [("q", True), ("q", 0)])
    assert tr.student == "7" and tr.observations == (1, 0) and tr.actions == ("q", "q")


def test_model_rejects_unknown_concepts_and_duplicate_questions():
    g = ConceptGraph(["c"])
    comp = toy1().components[0]
    with pytest.raises(ContractError):
        HPOMDPModel(g, make_questions([("q", "zz")]), (comp,), ObservationFunction([0.2], [0.9]))
    with pytest.raises(ContractError):
        HPOMDPModel(g, make_questions([("q", "c"), ("q", "c")]), (comp,),
                    ObservationFunction([0.2, 0.2], [0.9, 0.9]))
    with pytest.raises(ContractError):
        toy1().action("nope")


def test_pattern_prior_sources():
    assert toy1(k=2).pattern_prior.tolist() == [0.5, 0.5]
    m = toy1(k=2, membership=np.array([[0.9, 0.1], [0.5, 0.5]]))
    np.testing.assert_allclose(m.pattern_prior, [0.7, 0.3])
    assert toy1(k=2, membership_summary=[0.2, 0.8]).pattern_prior.tolist() == [0.2, 0.8]


def test_default_reward_is_mastered_count():
    assert chain2().reward.terminal.tolist() == [0, 1, 2]


def test_dataset_subset():
    ds = Dataset(ConceptGraph(["c"]), make_questions([("q", "c")]),
                 [Trajectory(str(i), (("q", 1),)) for i in range(4)])
    assert [t.student for t in ds.subset([3, 1]).trajectories] == ["3", "1"]
