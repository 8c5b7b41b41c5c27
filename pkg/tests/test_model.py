import math

import numpy as np
import pytest

from fungible import (
    FIXED,
    ModelSpec,
    SingularStructure,
    TargetUnreachable,
    builtin_conditions,
    canonical_model,
    condition_from_label,
    load_model,
    make_model,
    misspecify_to_epsilon,
    model_to_dict,
    population_rmsea,
    save_model,
    sigma_of_theta,
)
from helpers import diag_model, two_var_path


class TestSigmaOfTheta:
    def test_identity_case(self):
        model = diag_model(2)
        sigma = sigma_of_theta(model, [1.0, 1.0])
        np.testing.assert_allclose(sigma, np.eye(2), atol=1e-15)

    def test_two_variable_path_hand_expansion(self):
        # one path x -> y with b = 0.5, unit exogenous variance, unique
        # variance 0.75; expanding (I-A)^-1 S (I-A)^-T by hand gives an
        # equicorrelation matrix with off-diagonal 0.5
        model = two_var_path()
        sigma = sigma_of_theta(model, [0.5, 0.75])
        np.testing.assert_allclose(sigma, [[1.0, 0.5], [0.5, 1.0]], atol=1e-12)

    def test_unit_gain_self_loop_is_singular(self):
        model = make_model(
            ["a", "b"],
            [],
            [{"row": "a", "col": "a", "param": "loop"}],
            [
                {"row": "a", "col": "a", "param": "v1"},
                {"row": "b", "col": "b", "param": "v2"},
            ],
        )
        with pytest.raises(SingularStructure):
            sigma_of_theta(model, [1.0, 1.0, 1.0])

    def test_output_exactly_symmetric(self):
        cond = condition_from_label("Sigma3")
        rng = np.random.default_rng(3)
        for _ in range(5):
            theta = cond.theta_star * rng.uniform(0.8, 1.2, cond.model.q)
            sigma = sigma_of_theta(cond.model, theta)
            assert (sigma == sigma.T).all()

    def test_theta_validation(self):
        model = diag_model(2)
        with pytest.raises(ValueError):
            sigma_of_theta(model, [1.0])
        with pytest.raises(ValueError):
            sigma_of_theta(model, [1.0, np.inf])


class TestModelSpecValidation:
    def test_asymmetric_pattern_rejected(self):
        s_param = np.array([[0, 1], [FIXED, FIXED]])
        with pytest.raises(ValueError, match="not symmetric"):
            ModelSpec(
                observed=("a", "b"),
                latent=(),
                directed_fixed=np.zeros((2, 2)),
                directed_param=np.full((2, 2), FIXED),
                symmetric_fixed=np.zeros((2, 2)),
                symmetric_param=s_param,
                theta_names=("v", "c"),
            )

    def test_unused_parameter_index_rejected(self):
        s_param = np.array([[0, FIXED], [FIXED, 2]])
        with pytest.raises(ValueError, match="cover 0..q-1"):
            ModelSpec(
                observed=("a", "b"),
                latent=(),
                directed_fixed=np.zeros((2, 2)),
                directed_param=np.full((2, 2), FIXED),
                symmetric_fixed=np.zeros((2, 2)),
                symmetric_param=s_param,
                theta_names=("v1", "v2", "v3"),
            )

    def test_negative_df_rejected(self):
        with pytest.raises(ValueError, match="degrees of freedom"):
            make_model(
                ["z"],
                [],
                [{"row": "z", "col": "z", "param": "b"}],
                [{"row": "z", "col": "z", "param": "v"}],
            )

    def test_duplicate_directed_entry_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            make_model(
                ["x", "y"],
                [],
                [
                    {"row": "y", "col": "x", "param": "b1"},
                    {"row": "y", "col": "x", "param": "b2"},
                ],
                [
                    {"row": "x", "col": "x", "param": "v1"},
                    {"row": "y", "col": "y", "param": "v2"},
                ],
            )

    def test_filter_matrix(self):
        model = canonical_model()
        f = model.filter_matrix
        assert f.shape == (6, 8)
        np.testing.assert_array_equal(f[:, :6], np.eye(6))
        np.testing.assert_array_equal(f[:, 6:], 0.0)


class TestModelJson:
    def test_dict_round_trip(self):
        model = canonical_model()
        clone = load_model(model_to_dict(model))
        assert clone.theta_names == model.theta_names
        np.testing.assert_array_equal(clone.directed_param, model.directed_param)
        np.testing.assert_array_equal(clone.symmetric_param, model.symmetric_param)
        np.testing.assert_array_equal(clone.symmetric_fixed, model.symmetric_fixed)

    def test_file_round_trip(self, tmp_path):
        model = canonical_model()
        path = tmp_path / "model.json"
        save_model(model, path)
        clone = load_model(path)
        assert clone.observed == model.observed
        assert clone.latent == model.latent
        np.testing.assert_array_equal(clone.directed_param, model.directed_param)

    def test_integer_indices_accepted(self):
        model = make_model(
            ["x", "y"],
            [],
            [{"row": 1, "col": 0, "param": "b"}],
            [{"row": 0, "col": 0, "value": 1.0}, {"row": 1, "col": 1, "param": "u"}],
        )
        sigma = sigma_of_theta(model, [0.5, 0.75])
        np.testing.assert_allclose(sigma, [[1.0, 0.5], [0.5, 1.0]], atol=1e-12)

    def test_start_values_apply(self):
        doc = model_to_dict(two_var_path())
        doc["start_values"] = [{"param": "b", "value": 0.3}]
        model = load_model(doc)
        assert model.start is not None
        assert model.start[model.theta_names.index("b")] == 0.3


class TestBuiltinConditions:
    @pytest.mark.parametrize(
        "uv,se,label",
        [
            ("large_uv", "small_se", "Sigma1"),
            ("small_uv", "small_se", "Sigma2"),
            ("large_uv", "large_se", "Sigma3"),
            ("small_uv", "large_se", "Sigma4"),
        ],
    )
    def test_variant_labels(self, uv, se, label):
        cond = builtin_conditions(uv, se)
        assert cond.label == label
        assert cond.epsilon_pop == 0.0
        np.testing.assert_allclose(
            cond.sigma_pop, sigma_of_theta(cond.model, cond.theta_star), atol=1e-14
        )

    def test_standardized_diagonal(self, conditions):
        for cond in conditions.values():
            np.testing.assert_allclose(np.diag(cond.sigma_pop), 1.0, atol=1e-12)

    def test_population_covariance_positive_definite(self, conditions):
        for cond in conditions.values():
            assert np.linalg.eigvalsh(cond.sigma_pop).min() > 0

    def test_levels_enter_theta_star(self):
        cond = builtin_conditions("large_uv", "small_se")
        theta = dict(zip(cond.model.theta_names, cond.theta_star))
        assert theta["u1"] == 0.64
        assert theta["gamma1"] == 0.2
        assert theta["lam1"] == pytest.approx(math.sqrt(1 - 0.64))

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            builtin_conditions("huge_uv", "small_se")
        with pytest.raises(ValueError):
            condition_from_label("Sigma9")


class TestMisspecify:
    def test_zero_target_is_identity(self, conditions):
        cond = conditions["Sigma1"]
        assert misspecify_to_epsilon(cond, 0.0) is cond

    @pytest.mark.parametrize("eps", [0.03, 0.09])
    def test_round_trip(self, conditions, eps):
        mis = misspecify_to_epsilon(conditions["Sigma2"], eps)
        assert mis.epsilon_pop == eps
        achieved = population_rmsea(mis.model, mis.sigma_pop)
        assert abs(achieved - eps) <= 1e-6

    def test_monotone_perturbation(self, conditions):
        ts = [
            misspecify_to_epsilon(conditions["Sigma1"], eps).perturbation
            for eps in (0.0, 0.03, 0.06, 0.09)
        ]
        assert ts[0] == 0.0
        assert all(abs(ts[i]) < abs(ts[i + 1]) for i in range(3))

    def test_unreachable_target(self, conditions):
        with pytest.raises(TargetUnreachable):
            misspecify_to_epsilon(conditions["Sigma1"], 2.0)

    def test_negative_target_rejected(self, conditions):
        with pytest.raises(ValueError):
            misspecify_to_epsilon(conditions["Sigma1"], -0.01)

    def test_missing_direction_rejected(self, conditions):
        import dataclasses

        cond = dataclasses.replace(conditions["Sigma1"], misfit_pair=None)
        with pytest.raises(ValueError, match="perturbation direction"):
            misspecify_to_epsilon(cond, 0.03)
