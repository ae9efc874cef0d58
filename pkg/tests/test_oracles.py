import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from seqadjust.graph import AdmissiblePair, enumerate_minimal_pairs, is_s_admissible
from seqadjust.oracles import (DiscreteSCM, OracleError, Variable, brute_admissible,
                               exact_ate, exact_eif, exact_eif_table, exact_s_formula,
                               expectation, gateaux_derivative, linearity_residual, load_fixture,
                               observed_distribution, pair_parts, perturbed_components,
                               random_scm, random_surface, robustness_residual,
                               true_components)

TOY_PAIR = AdmissiblePair({"W"}, {"Z"})
ORACLE = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@pytest.fixture(scope="module")
def toy():
    return observed_distribution(load_fixture("toy"))


def trial_scm(effect=1.0):
    """A -> Y only, R exogenous: the ATE is the contrast of the Y means."""
    return DiscreteSCM([
        Variable("A", (0.0, 1.0), (), np.array([0.4, 0.6])),
        Variable("R", (0.0, 1.0), (), np.array([0.3, 0.7])),
        Variable("Y", (0.0, effect), ("A",), np.array([[0.8, 0.2], [0.3, 0.7]])),
    ])


class TestDiscreteSCM:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(OracleError):
            DiscreteSCM([Variable("A", (0.0, 1.0), (), np.array([0.5, 0.6])),
                          Variable("R", (0.0, 1.0), (), np.array([0.5, 0.5])),
                          Variable("Y", (0.0, 1.0), (), np.array([0.5, 0.5]))])

    def test_exposure_binary(self):
        with pytest.raises(OracleError):
            DiscreteSCM([Variable("A", (0.0, 1.0, 2.0), (), np.full(3, 1 / 3)),
                          Variable("R", (0.0, 1.0), (), np.array([0.5, 0.5])),
                          Variable("Y", (0.0, 1.0), (), np.array([0.5, 0.5]))])

    def test_joint_sums_to_one(self):
        scm = load_fixture("setup2")
        assert scm.joint().sum() == pytest.approx(1, abs=1e-12)
        assert scm.joint({"A": 1.0}).sum() == pytest.approx(1, abs=1e-12)

    def test_round_trip(self, tmp_path):
        scm = load_fixture("collider")
        path = tmp_path / "m.json"
        path.write_text(json.dumps(scm.to_dict()))
        again = DiscreteSCM.load(path)
        assert exact_ate(again) == exact_ate(scm)
        assert again.dumps() == scm.dumps()

    def test_trial_ate(self):
        assert exact_ate(trial_scm(2.0)) == pytest.approx(2.0 * (0.7 - 0.2), abs=1e-15)

    def test_graph_matches_fixture(self):
        scm = load_fixture("setup1")
        assert set(enumerate_minimal_pairs(scm.graph())) == {AdmissiblePair({"W1"}, {"Z1", "Z2"})}


class TestObserved:
    def test_mass(self, toy):
        assert toy.prob.sum() == pytest.approx(1, abs=1e-12)
        R, Y = toy.columns["R"], toy.columns["Y"]
        assert np.all(np.isnan(Y) == (R == 0))

    def test_contaminate(self, toy):
        Q = toy.contaminate(3, 0.1)
        assert Q.prob[3] == pytest.approx(0.9 * toy.prob[3] + 0.1)
        with pytest.raises(OracleError):
            toy.contaminate(3, -1.0)

    def test_positivity_reported(self):
        scm = DiscreteSCM([
            Variable("A", (0.0, 1.0), (), np.array([0.5, 0.5])),
            Variable("R", (0.0, 1.0), ("A",), np.array([[0.5, 0.5], [1.0, 0.0]])),
            Variable("Y", (0.0, 1.0), ("A",), np.array([[0.5, 0.5], [0.5, 0.5]])),
        ])
        with pytest.raises(OracleError, match="positivity"):
            exact_s_formula(observed_distribution(scm), AdmissiblePair())


class TestSFormula:
    def test_trial(self):
        scm = trial_scm(3.0)
        assert exact_s_formula(observed_distribution(scm), AdmissiblePair()) == \
            pytest.approx(exact_ate(scm), abs=1e-14)

    @pytest.mark.parametrize("name", ["setup2", "inner_pretreatment", "collider", "setup1", "mar", "toy"])
    def test_fixtures(self, name):
        scm = load_fixture(name)
        P = observed_distribution(scm)
        pairs = enumerate_minimal_pairs(scm.graph(), minimal_only=False)
        assert pairs
        for pair in pairs:
            assert exact_s_formula(P, pair) == pytest.approx(exact_ate(scm), abs=1e-10)

    def test_collider_bias(self):
        scm = load_fixture("collider")
        P = observed_distribution(scm)
        bad = AdmissiblePair(set(), {"C1", "C2"})
        assert not is_s_admissible(bad, scm.graph()).admissible
        assert abs(exact_s_formula(P, bad) - exact_ate(scm)) > 1e-3

    @ORACLE
    @given(st.integers(0, 10**6))
    def test_random_models(self, seed):
        scm = random_scm(seed)
        P = observed_distribution(scm)
        truth = exact_ate(scm)
        for pair in enumerate_minimal_pairs(scm.graph()):
            assert abs(exact_s_formula(P, pair) - truth) <= 1e-10


class TestEif:
    def test_moment_condition(self, toy):
        assert abs(expectation(toy, exact_eif_table(toy, TOY_PAIR))) < 1e-12

    def test_single_observation(self, toy):
        table = exact_eif_table(toy, TOY_PAIR)
        for i in (0, 5, toy.n - 1):
            assert exact_eif(toy, TOY_PAIR, toy.row(i)) == pytest.approx(table[i], abs=1e-14)

    def test_gateaux_central(self, toy):
        table = exact_eif_table(toy, TOY_PAIR)
        for i in range(toy.n):
            fd = gateaux_derivative(toy, TOY_PAIR, i, eps=1e-6)
            assert fd == pytest.approx(table[i], rel=1e-4, abs=1e-8)

    def test_forward_error_shrinks_linearly(self, toy):
        D = exact_eif_table(toy, TOY_PAIR)[0]
        e1 = abs(gateaux_derivative(toy, TOY_PAIR, 0, 1e-3, "forward") - D)
        e2 = abs(gateaux_derivative(toy, TOY_PAIR, 0, 5e-4, "forward") - D)
        assert 1.6 < e1 / e2 < 2.4

    def test_central_eps_guard(self, toy):
        with pytest.raises(OracleError):
            gateaux_derivative(toy, TOY_PAIR, 0, eps=2.0)

    @ORACLE
    @given(st.integers(0, 10**6))
    def test_moment_condition_random(self, seed):
        scm = random_scm(seed)
        P = observed_distribution(scm)
        for pair in enumerate_minimal_pairs(scm.graph())[:2]:
            assert abs(expectation(P, exact_eif_table(P, pair))) < 1e-12


class TestRobustness:
    CASES = {1: ("piA", "piR"), 2: ("Q1", "Q2"), 3: ("piR", "Q2")}

    @pytest.mark.parametrize("case", [1, 2, 3])
    def test_cases(self, toy, case):
        psi = exact_s_formula(toy, TOY_PAIR)
        rng = np.random.default_rng(case)
        for _ in range(5):
            wrong = perturbed_components(toy, TOY_PAIR, self.CASES[case], rng)
            assert abs(robustness_residual(toy, TOY_PAIR, wrong, psi)) < 1e-10

    def test_all_wrong(self, toy):
        psi = exact_s_formula(toy, TOY_PAIR)
        rng = np.random.default_rng(0)
        wrong = perturbed_components(toy, TOY_PAIR, ("piA", "piR", "Q1", "Q2"), rng)
        assert abs(robustness_residual(toy, TOY_PAIR, wrong, psi)) > 1e-4

    def test_unknown_name(self, toy):
        with pytest.raises(OracleError):
            robustness_residual(toy, TOY_PAIR, {"Q3": None}, 0.0)


class TestLinearity:
    @pytest.mark.parametrize("level", ["Q1", "Q2"])
    @pytest.mark.parametrize("alpha", [0.0, 1.0, 0.37])
    def test_mixture(self, toy, level, alpha):
        rng = np.random.default_rng(17)
        qa = random_surface(toy, TOY_PAIR, rng, level)
        qb = random_surface(toy, TOY_PAIR, rng, level)
        assert abs(linearity_residual(toy, TOY_PAIR, qa, qb, alpha, level)) <= 1e-12

    def test_true_components_consistent(self, toy):
        comps = true_components(toy, TOY_PAIR)
        parts = pair_parts(toy, TOY_PAIR)
        assert set(comps) == {"Q1", "Q2", "piA", "piR"}
        assert all(0 < v < 1 for v in parts.pi_a.values())


class TestBruteForceReferences:
    def test_brute_admissible_fixture(self):
        G = load_fixture("setup1").graph()
        assert brute_admissible(AdmissiblePair({"W1"}, {"Z1", "Z2"}), G)
        assert not brute_admissible(AdmissiblePair({"W1"}, {"Z1"}), G)
