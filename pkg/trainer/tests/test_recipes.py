"""The restricted derived-feature grammar."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest

from trainer_toolkit.recipes import (
    RecipeContext,
    RecipeError,
    UnknownColumnError,
    derive_feature,
)


@pytest.fixture
def table():
    return {
        "grbd_2022": np.array([1.0, 2.0, 4.0]),
        "grbd_2023": np.array([2.0, 3.0, 5.0]),
        "evi_2022": np.array([0.1, 0.2, 0.3]),
        "x": np.array([0.0, 10.0, 20.0]),
        "y": np.array([0.0, 0.0, 0.0]),
    }


CTX = RecipeContext(coordinates=("x", "y"), target_year=2023)


class TestLag:
    def test_base_name_resolves_against_target_year(self, table):
        out = derive_feature("lag(grbd, years=1)", table, CTX)
        assert np.array_equal(out, table["grbd_2022"])

    def test_year_tagged_name_shifts_its_own_tag(self, table):
        out = derive_feature("lag(grbd_2023, years=1)", table, CTX)
        assert np.array_equal(out, table["grbd_2022"])

    def test_lag_without_target_year(self, table):
        with pytest.raises(RecipeError):
            derive_feature("lag(grbd, years=1)", table, RecipeContext(coordinates=("x", "y")))

    def test_lag_to_missing_year(self, table):
        with pytest.raises(UnknownColumnError):
            derive_feature("lag(grbd, years=5)", table, CTX)


def brute_force_neighbor_sum(values, xs, ys, radius):
    out = []
    for i in range(len(values)):
        total = 0.0
        for j in range(len(values)):
            d = math.dist((xs[i], ys[i]), (xs[j], ys[j]))
            if d <= radius:
                total += values[j]
        out.append(total)
    return out


class TestNeighborSum:
    def test_collinear_grid_middle_point(self, table):
        out = derive_feature("neighbor_sum(grbd_2022, radius=10)", table, CTX)
        expected = brute_force_neighbor_sum(
            table["grbd_2022"], table["x"], table["y"], 10.0
        )
        assert np.allclose(out, expected)
        assert out[1] == 1.0 + 2.0 + 4.0  # both neighbours of the middle point count

    def test_radius_zero_is_self_only(self, table):
        out = derive_feature("neighbor_sum(grbd_2022, radius=0)", table, CTX)
        assert np.array_equal(out, table["grbd_2022"])

    def test_matches_brute_force_on_random_points(self):
        rng = random.Random(17)
        n = 50
        table = {
            "v": np.array([rng.uniform(0, 5) for _ in range(n)]),
            "px": np.array([rng.uniform(0, 100) for _ in range(n)]),
            "py": np.array([rng.uniform(0, 100) for _ in range(n)]),
        }
        ctx = RecipeContext(coordinates=("px", "py"))
        out = derive_feature("neighbor_sum(v, radius=25)", table, ctx)
        expected = brute_force_neighbor_sum(table["v"], table["px"], table["py"], 25.0)
        assert np.allclose(out, expected)

    def test_symmetry_of_contribution(self):
        rng = random.Random(23)
        n = 30
        xs = np.array([rng.uniform(0, 50) for _ in range(n)])
        ys = np.array([rng.uniform(0, 50) for _ in range(n)])
        dx = xs[:, None] - xs[None, :]
        dy = ys[:, None] - ys[None, :]
        within = (dx * dx + dy * dy) <= 15.0**2
        assert (within == within.T).all()

    def test_requires_coordinates(self, table):
        with pytest.raises(RecipeError):
            derive_feature("neighbor_sum(grbd_2022, radius=10)", table, RecipeContext())

    def test_missing_values_contribute_nothing(self, table):
        table = dict(table)
        table["grbd_2022"] = np.array([1.0, np.nan, 4.0])
        out = derive_feature("neighbor_sum(grbd_2022, radius=10)", table, CTX)
        assert out[1] == 5.0


class TestArithmeticAndThreshold:
    def test_column_arithmetic(self, table):
        out = derive_feature("grbd_2022 * 2 + evi_2022 - grbd_2023 / 2", table, CTX)
        expected = table["grbd_2022"] * 2 + table["evi_2022"] - table["grbd_2023"] / 2
        assert np.allclose(out, expected)

    def test_unary_minus(self, table):
        assert np.allclose(derive_feature("-grbd_2022", table, CTX), -table["grbd_2022"])

    def test_threshold(self, table):
        out = derive_feature("threshold(grbd_2022, value=1.5)", table, CTX)
        assert np.array_equal(out, np.array([0.0, 1.0, 1.0]))

    def test_calls_combine_with_arithmetic(self, table):
        out = derive_feature("threshold(grbd_2022, value=1.5) * 10 + evi_2022", table, CTX)
        assert np.allclose(out, np.array([0.1, 10.2, 10.3]))


class TestRejections:
    @pytest.mark.parametrize(
        "recipe",
        [
            "import os",
            "grbd_2022 ** 2",
            "__import__('os').system('true')",
            "grbd_2022atak sfd",
            "f(grbd_2022)",
            "neighbor_sum(grbd_2022, radius='wide')",
            "lag(grbd_2022 + 1, years=1)",
            "'text'",
            "1 + 2",
            "[grbd_2022]",
        ],
    )
    def test_rejected_recipes(self, recipe, table):
        with pytest.raises(RecipeError):
            derive_feature(recipe, table, CTX)

    def test_unknown_column(self, table):
        with pytest.raises(UnknownColumnError, match="ghost"):
            derive_feature("ghost + 1", table, CTX)

    def test_missing_radius_keyword(self, table):
        with pytest.raises(RecipeError):
            derive_feature("neighbor_sum(grbd_2022)", table, CTX)
