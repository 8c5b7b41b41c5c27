import math

import numpy as np
import pytest

from fungible import (
    DegenerateSample,
    NotPositiveDefinite,
    StudyDesign,
    check_fixture_scaling,
    emit_table,
    paper_fixture,
    parse_table,
    replication_rng,
    run_cell,
    run_design,
    wishart_sample,
)
from fungible.simstudy import _columns, condition_at

SMALL_DESIGN = StudyDesign(
    conditions=("Sigma1",),
    sample_sizes=(200,),
    epsilons=(0.0, 0.03),
    replications=2,
    seed=7,
    directions=16,
)


class TestReplicationRng:
    def test_streams_are_stable(self):
        a = replication_rng(1, "Sigma1", 200, 0.03, 5).standard_normal(4)
        b = replication_rng(1, "Sigma1", 200, 0.03, 5).standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ_across_coordinates(self):
        base = replication_rng(1, "Sigma1", 200, 0.03, 5).standard_normal(4)
        for args in [
            (2, "Sigma1", 200, 0.03, 5),
            (1, "Sigma2", 200, 0.03, 5),
            (1, "Sigma1", 1000, 0.03, 5),
            (1, "Sigma1", 200, 0.0, 5),
            (1, "Sigma1", 200, 0.03, 6),
        ]:
            other = replication_rng(*args).standard_normal(4)
            assert not np.array_equal(base, other)


class TestWishart:
    def test_fixed_seed_bit_identical(self):
        sigma = np.array([[1.0, 0.3], [0.3, 1.0]])
        a = wishart_sample(sigma, 50, replication_rng(3, "c", 50, 0.0, 0))
        b = wishart_sample(sigma, 50, replication_rng(3, "c", 50, 0.0, 0))
        np.testing.assert_array_equal(a, b)

    def test_mean_recovers_scale_matrix(self):
        rng = replication_rng(11, "mean", 50, 0.0, 0)
        sigma = np.eye(2)
        draws = np.stack([wishart_sample(sigma, 50, rng) for _ in range(10000)])
        # Var(S_ij) = (sigma_ii sigma_jj + sigma_ij^2) / (n - 1)
        se_diag = math.sqrt(2.0 / 49 / 10000)
        se_off = math.sqrt(1.0 / 49 / 10000)
        mean = draws.mean(axis=0)
        assert abs(mean[0, 0] - 1.0) < 3 * se_diag
        assert abs(mean[1, 1] - 1.0) < 3 * se_diag
        assert abs(mean[0, 1]) < 3 * se_off

    def test_scalar_chi_square_reduction(self):
        rng = replication_rng(13, "chi2", 25, 0.0, 0)
        n = 25
        draws = np.array(
            [wishart_sample(np.array([[1.0]]), n, rng)[0, 0] for _ in range(4000)]
        )
        scaled = (n - 1) * draws
        se = math.sqrt(2.0 * (n - 1) / 4000)
        assert abs(scaled.mean() - (n - 1)) < 3 * se

    def test_sample_is_symmetric_pd(self):
        rng = replication_rng(5, "pd", 10, 0.0, 0)
        sigma = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]])
        s = wishart_sample(sigma, 10, rng)
        assert (s == s.T).all()
        assert np.linalg.eigvalsh(s).min() > 0

    def test_requires_n_above_p(self):
        with pytest.raises(ValueError, match="n > p"):
            wishart_sample(np.eye(3), 3, replication_rng(0, "x", 3, 0.0, 0))

    def test_invalid_scale_matrix(self):
        with pytest.raises(NotPositiveDefinite):
            wishart_sample(-np.eye(2), 50, replication_rng(0, "x", 50, 0.0, 0))

    def test_degenerate_sample_after_two_tries(self):
        class ZeroRng:
            def chisquare(self, dfs):
                return np.zeros(np.shape(dfs))

            def standard_normal(self, size):
                return np.zeros(size)

        with pytest.raises(DegenerateSample):
            wishart_sample(np.eye(2), 50, ZeroRng())


class TestRunCell:
    def test_population_confidence_cell(self):
        cell = run_cell(SMALL_DESIGN, "Sigma1", 200, 0.0, "confidence")
        assert cell.major_sd == 0.0
        assert cell.minor_sd == 0.0
        assert cell.n_converged == 1
        assert cell.n_excluded == 0
        assert cell.major_mean >= cell.minor_mean > 0

    def test_single_replication_sd_zero(self):
        design = StudyDesign(
            conditions=("Sigma1",),
            sample_sizes=(200,),
            epsilons=(0.0,),
            replications=1,
            seed=3,
            directions=16,
        )
        cell = run_cell(design, "Sigma1", 200, 0.0, "eps_tilde")
        assert cell.major_sd == 0.0
        assert cell.n_converged + cell.n_excluded == 1

    def test_equal_seeds_identical_cells(self):
        a = run_cell(SMALL_DESIGN, "Sigma1", 200, 0.03, "delta_f")
        b = run_cell(SMALL_DESIGN, "Sigma1", 200, 0.03, "delta_f")
        assert a == b

    def test_counts_add_up(self):
        cell = run_cell(SMALL_DESIGN, "Sigma1", 200, 0.03, "eps_tilde")
        assert cell.n_converged + cell.n_excluded == SMALL_DESIGN.replications

    def test_condition_cache(self):
        assert condition_at("Sigma1", 0.03) is condition_at("Sigma1", 0.03)


class TestRunDesign:
    def test_cell_layout(self):
        table = run_design(SMALL_DESIGN)
        # one confidence cell plus one cell per epsilon for each FPE mode
        assert len(table.cells) == 1 + 2 * len(SMALL_DESIGN.epsilons)
        modes = {c.mode for c in table.cells}
        assert modes == {"confidence", "eps_tilde", "delta_f"}

    def test_emitted_csv_deterministic(self):
        a = emit_table(run_design(SMALL_DESIGN), "csv")
        b = emit_table(run_design(SMALL_DESIGN), "csv")
        assert a == b

    def test_threaded_run_matches_serial(self):
        serial = run_design(SMALL_DESIGN, threads=1)
        threaded = run_design(SMALL_DESIGN, threads=2)
        assert serial == threaded

    def test_generated_major_at_least_minor(self):
        table = run_design(SMALL_DESIGN)
        for cell in table.cells:
            if not math.isnan(cell.major_mean):
                assert cell.major_mean >= cell.minor_mean

    def test_design_validation(self):
        with pytest.raises(ValueError):
            StudyDesign(replications=0)
        with pytest.raises(ValueError):
            StudyDesign(epsilons=(0.09, 0.03))
        with pytest.raises(ValueError):
            StudyDesign(epsilons=(-0.01, 0.03))


class TestTableEmission:
    def test_empty_design_emits_header_only(self):
        design = StudyDesign(conditions=(), sample_sizes=(), replications=1)
        text = emit_table(run_design(design), "csv")
        assert len(text.strip().splitlines()) == 1

    def test_csv_parse_round_trip(self):
        table = run_design(SMALL_DESIGN)
        csv = emit_table(table, "csv")
        again = emit_table(parse_table(csv, "csv"), "csv")
        assert csv == again

    def test_markdown_round_trip_at_two_decimals(self):
        table = run_design(SMALL_DESIGN)
        md = emit_table(table, "markdown")
        parsed = parse_table(md, "markdown")
        assert emit_table(parsed, "markdown") == md
        csv_again = emit_table(parsed, "csv")
        for a, b in zip(
            parse_table(emit_table(table, "csv"), "csv").cells,
            parse_table(csv_again, "csv").cells,
        ):
            assert round(a.major_mean, 2) == pytest.approx(b.major_mean, abs=1e-12)
            assert round(a.minor_mean, 2) == pytest.approx(b.minor_mean, abs=1e-12)

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_table(run_design(SMALL_DESIGN), "xml")


class TestPaperFixture:
    def test_fixture_shape(self):
        table = paper_fixture()
        assert len(table.conditions) == 4
        assert len(table.sample_sizes) == 2
        rows = len(table.conditions) * len(table.sample_sizes)
        assert rows == 8
        assert len(_columns(table.epsilons)) == 16

    def test_reference_values_spot_checks(self):
        table = paper_fixture()
        cs = table.cell("Sigma1", 1000, "confidence", 0.0)
        assert cs.major_mean == 0.19
        assert cs.major_sd == 0.0
        assert cs.minor_mean == 0.18
        df_cell = table.cell("Sigma1", 1000, "delta_f", 0.09)
        assert (df_cell.major_mean, df_cell.minor_mean) == (0.40, 0.38)
        et_cell = table.cell("Sigma3", 200, "eps_tilde", 0.0)
        assert (et_cell.major_mean, et_cell.minor_mean) == (0.50, 0.39)

    def test_scaling_check_passes(self):
        ok, lines = check_fixture_scaling()
        assert ok
        assert sum("ok" in ln for ln in lines) >= 8
        assert lines[-1] == "all checks passed"

    def test_scaling_check_detects_misfit(self):
        import dataclasses

        table = paper_fixture()
        cells = list(table.cells)
        for i, cell in enumerate(cells):
            if cell.condition == "Sigma1" and cell.n == 200 and cell.mode == "confidence":
                cells[i] = dataclasses.replace(cell, major_mean=0.50)
        bad = dataclasses.replace(table, cells=tuple(cells))
        ok, lines = check_fixture_scaling(bad)
        assert not ok
        assert any("FAIL" in ln for ln in lines)
