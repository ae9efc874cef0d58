import numpy as np
import pytest

from seqadjust.graph import (AdmissiblePair, GraphError, GraphParseError, MGraph,
                             d_separated, default_pair_markovian, enumerate_minimal_pairs,
                             forbidden_nodes, genealogy, is_s_admissible, mutilate, overline,
                             parse_graph, proper_backdoor_graph, proper_causal_nodes, underline)
from seqadjust.io import read_graph
from seqadjust.oracles import brute_dsep, brute_forbidden, brute_pairs, random_dag
from seqadjust.simulate import GRAPH_DIR

P = AdmissiblePair


def load(name):
    return read_graph(GRAPH_DIR / f"{name}.graph")


@pytest.fixture(scope="module")
def setup1():
    return load("setup1")


def header(*extra):
    lines = ["node A role=exposure", "node Y role=outcome", "node R role=selection"]
    return "\n".join(lines + list(extra))


class TestParse:
    def test_setup1_shape(self, setup1):
        assert len(setup1.names) == 6
        assert len(setup1.edges) == 10

    def test_setup2_shape(self):
        G = load("setup2")
        assert len(G.names) == 7
        assert G.latents == {"U1"}

    def test_self_loop(self):
        with pytest.raises(GraphParseError, match="cycle") as err:
            parse_graph(header("A -> A"))
        assert err.value.lineno == 4

    def test_cycle(self):
        with pytest.raises(GraphParseError, match="cycle"):
            parse_graph(header("node B", "A -> B", "B -> Y", "Y -> A"))

    def test_duplicate_node(self):
        with pytest.raises(GraphParseError, match="duplicate node"):
            parse_graph(header("node A"))

    def test_missing_role(self):
        with pytest.raises(GraphParseError, match="missing selection"):
            parse_graph("node A role=exposure\nnode Y role=outcome")

    def test_duplicate_role(self):
        with pytest.raises(GraphParseError, match="duplicate outcome"):
            parse_graph(header("node Y2 role=outcome"))

    def test_undeclared_endpoint(self):
        with pytest.raises(GraphParseError, match="undeclared") as err:
            parse_graph(header("A -> M"))
        assert err.value.lineno == 4

    def test_text_round_trip(self, setup1):
        again = parse_graph(setup1.to_text())
        assert again.edges == setup1.edges
        assert again.names == setup1.names


class TestGenealogy:
    def test_descendants_of_exposure(self, setup1):
        assert genealogy({"A"}, setup1, "de") == {"Z1", "Z2", "Y", "R"}

    def test_inclusive_ancestors(self, setup1):
        assert "A" in genealogy({"A"}, setup1, "An")

    def test_non_descendants(self, setup1):
        assert genealogy({"A"}, setup1, "nd") == {"W1"}

    def test_unknown_node(self, setup1):
        with pytest.raises(GraphError):
            genealogy({"Q"}, setup1, "de")


class TestMutilate:
    def test_overline(self, setup1):
        assert overline(setup1, {"A"}).parents("A") == set()
        assert len(overline(setup1, {"A"}).edges) == 9

    def test_underline(self, setup1):
        assert underline(setup1, {"A"}).children("A") == set()

    def test_identity(self, setup1):
        assert mutilate(setup1, set(), setup1.names).edges == setup1.edges


class TestCausalNodes:
    def test_setup1(self, setup1):
        assert proper_causal_nodes("A", "Y", setup1) == {"Z1", "Z2", "Y"}
        assert forbidden_nodes("A", "Y", setup1) == {"A", "Z1", "Z2", "Y", "R"}

    def test_setup2_against_brute_force(self):
        G = load("setup2")
        fb = forbidden_nodes("A", "Y", G)
        assert fb == brute_forbidden(G)
        # C1 and C2 have no directed path to Y, so Y is the only causal node
        assert fb == {"A", "Y"}

    def test_single_edge(self):
        G = MGraph.from_edges([("A", "Y")])
        assert proper_causal_nodes("A", "Y", G) == {"Y"}

    def test_no_causal_path(self):
        G = MGraph.from_edges([("Y", "A"), ("A", "R")])
        assert proper_causal_nodes("A", "Y", G) == set()
        assert forbidden_nodes("A", "Y", G) == {"A"}
        assert proper_backdoor_graph("A", "Y", G).edges == G.edges

    def test_backdoor_graph_setup1(self, setup1):
        removed = setup1.edges - proper_backdoor_graph("A", "Y", setup1).edges
        assert removed == {("A", "Z1"), ("A", "Z2"), ("A", "Y")}

    def test_backdoor_graph_chain(self):
        G = MGraph.from_edges([("A", "M"), ("M", "Y")])
        assert proper_backdoor_graph("A", "Y", G).edges == {("M", "Y")}


class TestDSeparation:
    def test_chain(self):
        G = MGraph.from_edges([("A", "B"), ("B", "Y")])
        assert d_separated({"A"}, {"Y"}, {"B"}, G)

    def test_collider(self):
        G = MGraph.from_edges([("A", "B"), ("Y", "B")])
        assert not d_separated({"A"}, {"Y"}, {"B"}, G)
        assert d_separated({"A"}, {"Y"}, set(), G)

    def test_descendant_of_collider(self):
        G = MGraph.from_edges([("A", "B"), ("Y", "B"), ("B", "D")])
        assert not d_separated({"A"}, {"Y"}, {"D"}, G)

    def test_setup1_selection(self, setup1):
        assert d_separated({"Y"}, {"R"}, {"W1", "A", "Z1", "Z2"}, setup1)

    def test_overlap_rejected(self, setup1):
        with pytest.raises(GraphError):
            d_separated({"A"}, {"A"}, set(), setup1)

    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            G = random_dag(rng, int(rng.integers(3, 8)))
            names = sorted(G.names)
            x, y = rng.choice(names, 2, replace=False)
            rest = [v for v in names if v not in (x, y)]
            S = {v for v in rest if rng.random() < 0.4}
            assert d_separated({x}, {y}, S, G) == brute_dsep({x}, {y}, S, G)


class TestAdmissibility:
    def test_setup1_pair(self, setup1):
        cert = is_s_admissible(P({"W1"}, {"Z1", "Z2"}), setup1)
        assert cert.admissible
        assert cert.conditions == (True, True, True)

    def test_collider_collider(self):
        cert = is_s_admissible(P({"C1"}, {"C2"}), load("collider"))
        assert not cert.admissible
        assert cert.open_path is not None

    def test_butterfly_nothing_admissible(self):
        G = load("butterfly")
        for pair in enumerate_minimal_pairs(G, minimal_only=False):
            pytest.fail(f"unexpected admissible pair {pair}")
        assert not is_s_admissible(P(set(), {"C1", "C2"}), G).admissible

    def test_forbidden_certificate(self, setup1):
        cert = is_s_admissible(P({"W1", "Z1"}, {"Z2"}), setup1)
        assert cert.failed == 1

    def test_latent_rejected(self):
        with pytest.raises(GraphError, match="observed covariates"):
            is_s_admissible(P({"U1"}, set()), load("setup2"))


GOLDEN = {
    "setup2": {P({"B1", "C1", "C2"}, set()), P({"B1"}, {"C2"})},
    "inner_pretreatment": {P({"B1"}, {"B2"})},
    "collider": {P(set(), {"C2"})},
    "butterfly": set(),
    "setup1": {P({"W1"}, {"Z1", "Z2"})},
}


class TestEnumeration:
    @pytest.mark.parametrize("name", sorted(GOLDEN))
    def test_goldens(self, name):
        assert set(enumerate_minimal_pairs(load(name))) == GOLDEN[name]

    @pytest.mark.parametrize("name", sorted(GOLDEN) + ["toy", "mar"])
    def test_matches_brute_force(self, name):
        G = load(name)
        assert enumerate_minimal_pairs(G) == brute_pairs(G)

    def test_canonical_order(self):
        pairs = enumerate_minimal_pairs(load("setup2"))
        assert [str(p) for p in pairs] == ["({B1};{C2})", "({B1,C1,C2};{})"]

    def test_all_pairs_superset(self):
        G = load("setup2")
        every = enumerate_minimal_pairs(G, minimal_only=False)
        assert set(enumerate_minimal_pairs(G)) <= set(every)
        assert all(is_s_admissible(p, G).admissible for p in every)

    def test_chronological_filter(self):
        G = load("setup2")
        for p in enumerate_minimal_pairs(G, chronological=True):
            assert all(G.node(w).tier == 0 for w in p.W)
            assert all(G.node(z).tier == 1 for z in p.Z)


class TestDefaultPair:
    def test_setup1(self, setup1):
        assert default_pair_markovian(setup1) == P({"W1"}, {"Z1", "Z2"})

    def test_confounded(self):
        G = MGraph.from_edges([("W", "A"), ("W", "Y"), ("A", "Y")])
        assert default_pair_markovian(G) == P({"W"}, set())

    def test_trial(self):
        G = MGraph.from_edges([("A", "Y")])
        assert default_pair_markovian(G) == P()

    def test_selection_parent_rejected(self):
        with pytest.raises(GraphError, match="selection"):
            default_pair_markovian(MGraph.from_edges([("A", "Y"), ("R", "Y")]))

    def test_latent_rejected(self):
        with pytest.raises(GraphError):
            default_pair_markovian(load("setup2"))

    def test_self_selection_rejected(self):
        with pytest.raises(GraphError, match="self-selection"):
            default_pair_markovian(MGraph.from_edges([("A", "Y"), ("Y", "R")]))

    def test_always_admissible(self):
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(300):
            G = random_dag(rng, int(rng.integers(3, 7)))
            # selection indicators are childless; the exposure precedes the outcome
            A, R, Y = G.exposure, G.selection, G.outcome
            downstream = genealogy({Y}, G, "de")
            if R in downstream or A in downstream or G.children(R):
                continue
            assert is_s_admissible(default_pair_markovian(G), G).admissible
            checked += 1
        assert checked > 20


class TestPairParse:
    def test_round_trip(self):
        p = P.parse("W1, W2|Z1")
        assert str(p) == "({W1,W2};{Z1})"

    def test_empty_sides(self):
        assert P.parse("|") == P()

    def test_overlap(self):
        with pytest.raises(GraphError):
            P.parse("W1|W1")

    def test_missing_bar(self):
        with pytest.raises(GraphError):
            P.parse("W1,Z1")
