import math

import numpy as np
import pytest

from fracsource.disc_spectrum import build_spectrum
from fracsource.errors import (
    EmptySignalError,
    SensorGeometryError,
    ValidationError,
)
from fracsource.forward_model import FluxTrace, SourceModel, flux_trace, grouped_amplitudes
from fracsource.inversion import (
    InversionConfig,
    ReconstructionResult,
    detect_change_points,
    detect_onset,
    estimate_alpha,
    fit_log_slope,
    predicted_flux,
    reconstruct,
    refine_joint,
    result_to_json,
    solve_mode_amplitudes,
    split_multiplicity,
)

from conftest import REF_PIECE_1, REF_PIECE_2, make_coeffs


CFG = InversionConfig(changepoint_min_gap=0.3)


def _noisy(traces, level, seed):
    rng = np.random.default_rng(seed)
    out = []
    for tr in traces:
        sigma = level * float(np.max(np.abs(tr.values)))
        out.append(FluxTrace(tr.sensor_angle, tr.times,
                             tr.values + rng.normal(0.0, sigma, len(tr.values))))
    return tuple(out)


class TestDetectOnset:
    def test_noiseless_onset(self, spectrum30):
        p = make_coeffs(spectrum30, REF_PIECE_1)
        model = SourceModel(alpha=0.75, cuts=(0.5, math.inf), piece_coeffs=(p,),
                            spectrum=spectrum30)
        t = np.linspace(0.0, 2.0, 201)  # step 0.01
        traces = tuple(flux_trace(model, th, t) for th in (0.3, 1.3))
        c0 = detect_onset(traces, CFG)
        assert 0.49 <= c0 <= 0.51

    def test_zero_traces(self):
        t = np.linspace(0.0, 1.0, 101)
        traces = (FluxTrace(0.3, t, np.zeros_like(t)),
                  FluxTrace(1.3, t, np.zeros_like(t)))
        with pytest.raises(EmptySignalError):
            detect_onset(traces, CFG)

    def test_immediate_onset(self, spectrum30):
        p = make_coeffs(spectrum30, REF_PIECE_1)
        model = SourceModel(alpha=0.75, cuts=(0.0, math.inf), piece_coeffs=(p,),
                            spectrum=spectrum30)
        t = np.linspace(0.0, 1.0, 1001)
        traces = tuple(flux_trace(model, th, t) for th in (0.3, 1.3))
        assert detect_onset(traces, CFG) == 0.0


class TestEstimateAlpha:
    def test_pure_power_slope(self):
        # L{t^(a-1)}(s) = Gamma(a) s^-a: the fitter recovers the exponent
        alpha = 0.6
        s = np.geomspace(20.0, 200.0, 40)
        mags = math.gamma(alpha) * s ** (-alpha)
        slope, _, _ = fit_log_slope(s, mags)
        assert -slope == pytest.approx(0.6, abs=1e-3)

    @pytest.mark.parametrize("alpha", [0.75, 0.9])
    def test_synthetic_staged_accuracy(self, spectrum30, reference_grid, alpha):
        p1 = make_coeffs(spectrum30, REF_PIECE_1)
        p2 = make_coeffs(spectrum30, REF_PIECE_2)
        model = SourceModel(alpha=alpha, cuts=(0.2, 1.2, math.inf),
                            piece_coeffs=(p1, p2), spectrum=spectrum30)
        traces = tuple(flux_trace(model, th, reference_grid) for th in (0.3, 1.3))
        c0 = detect_onset(traces, CFG)
        got, diag = estimate_alpha(traces, c0, CFG, spectrum30)
        assert abs(got - alpha) <= 5e-3
        assert "alpha_slope" in diag and "alpha_vp" in diag

    def test_without_spectrum_returns_slope_estimate(self, reference_traces):
        c0 = detect_onset(reference_traces, CFG)
        got, diag = estimate_alpha(reference_traces, c0, CFG, None)
        assert 0.5 < got < 1.0
        assert diag["alpha_slope"] == got


class TestDetectChangePoints:
    def test_k2_onset_at_zero(self, spectrum30):
        p1 = make_coeffs(spectrum30, REF_PIECE_1)
        p2 = make_coeffs(spectrum30, REF_PIECE_2)
        model = SourceModel(alpha=0.75, cuts=(0.0, 1.0, math.inf),
                            piece_coeffs=(p1, p2), spectrum=spectrum30)
        t = np.arange(0.0, 3.0 + 1e-12, 0.005)
        traces = tuple(flux_trace(model, th, t) for th in (0.3, 1.3))
        cfg = InversionConfig(changepoint_min_gap=0.3)
        cuts = detect_change_points(traces, 0.0, cfg)
        assert len(cuts) == 1
        assert 0.995 <= cuts[0] <= 1.005

    def test_k1_empty(self, spectrum30, reference_grid):
        p1 = make_coeffs(spectrum30, REF_PIECE_1)
        model = SourceModel(alpha=0.75, cuts=(0.2, math.inf), piece_coeffs=(p1,),
                            spectrum=spectrum30)
        traces = tuple(flux_trace(model, th, reference_grid) for th in (0.3, 1.3))
        assert detect_change_points(traces, 0.2, CFG) == []

    def test_k3_two_cuts(self, spectrum30):
        p1 = make_coeffs(spectrum30, REF_PIECE_1)
        p2 = make_coeffs(spectrum30, REF_PIECE_2)
        p3 = make_coeffs(spectrum30, {(0, 1): 0.5, (1, 1): -0.3 + 0.6j,
                                      (2, 1): 0.3 - 0.2j})
        model = SourceModel(alpha=0.8, cuts=(0.2, 0.9, 1.6, math.inf),
                            piece_coeffs=(p1, p2, p3), spectrum=spectrum30)
        t = np.linspace(0.0, 4.0, 4001)
        traces = tuple(flux_trace(model, th, t) for th in (0.3, 1.3))
        h = t[1] - t[0]
        cuts = detect_change_points(traces, 0.2, CFG)
        assert len(cuts) == 2
        assert abs(cuts[0] - 0.9) <= h + 1e-12
        assert abs(cuts[1] - 1.6) <= h + 1e-12

    def test_grid_step_guard(self, reference_traces):
        cfg = InversionConfig(changepoint_min_gap=0.005)
        with pytest.raises(ValidationError):
            detect_change_points(reference_traces, 0.2, cfg)


class TestSolveAmplitudes:
    def test_recovers_grouped_truth_j6(self, spectrum50, reference_grid):
        # 6 distinct eigenvalues below 50
        assert len(spectrum50.distinct_eigenvalues) == 6
        entries1 = {(0, 1): 1.0, (1, 1): 0.4 + 0.2j, (2, 1): -0.5 + 0.1j,
                    (0, 2): 0.7, (3, 1): 0.3 - 0.6j, (1, 2): -0.2 + 0.3j}
        entries2 = {(0, 1): -0.4, (1, 1): 0.9 - 0.3j, (2, 1): 0.2 + 0.4j,
                    (0, 2): -0.3, (3, 1): -0.5 + 0.2j, (1, 2): 0.4 + 0.1j}
        p1 = make_coeffs(spectrum50, entries1)
        p2 = make_coeffs(spectrum50, entries2)
        model = SourceModel(alpha=0.75, cuts=(0.2, 1.2, math.inf),
                            piece_coeffs=(p1, p2), spectrum=spectrum50)
        traces = tuple(flux_trace(model, th, reference_grid) for th in (0.3, 1.3))
        b, diag = solve_mode_amplitudes(traces, 0.75, [0.2, 1.2], spectrum50, CFG)
        for ell, theta in enumerate((0.3, 1.3)):
            truth = grouped_amplitudes(model, theta)
            rel = np.abs(b[ell] - truth) / (np.abs(truth) + 1e-12)
            assert np.max(rel) <= 1e-3
        assert max(diag["relative_residuals"]) < 1e-6

    def test_zero_traces_zero_amplitudes(self, spectrum30, reference_grid):
        traces = (FluxTrace(0.3, reference_grid, np.zeros_like(reference_grid)),
                  FluxTrace(1.3, reference_grid, np.zeros_like(reference_grid)))
        b, _ = solve_mode_amplitudes(traces, 0.75, [0.2], spectrum30, CFG)
        assert np.all(b == 0)

    def test_single_mode_recovery(self, reference_grid):
        sp = build_spectrum(6.0)
        p = make_coeffs(sp, {(0, 1): 1.7})
        model = SourceModel(alpha=0.8, cuts=(0.0, math.inf), piece_coeffs=(p,),
                            spectrum=sp)
        traces = tuple(flux_trace(model, th, reference_grid) for th in (0.3, 1.3))
        b, _ = solve_mode_amplitudes(traces, 0.8, [0.0], sp, CFG)
        truth = grouped_amplitudes(model, 0.3)[0, 0]
        assert abs(b[0, 0, 0] - truth) <= 1e-6


class TestSplitMultiplicity:
    def test_round_trip_exactness(self, spectrum30, reference_model):
        # grouped -> split -> regroup reproduces the amplitudes to 1e-12
        sensors = (0.3, 1.3)
        grouped = np.stack([grouped_amplitudes(reference_model, th)
                            for th in sensors])
        coeffs, report = split_multiplicity(grouped, spectrum30, sensors, CFG)
        rebuilt = SourceModel(alpha=0.75, cuts=(0.2, 1.2, math.inf),
                              piece_coeffs=tuple(coeffs), spectrum=spectrum30)
        regrouped = np.stack([grouped_amplitudes(rebuilt, th) for th in sensors])
        assert np.max(np.abs(regrouped - grouped)) <= 1e-12
        for k, pc in enumerate(coeffs):
            truth = reference_model.piece_coeffs[k].values
            assert np.max(np.abs(pc.values - truth)) <= 1e-12

    def test_determinant_value(self):
        assert abs(2j * math.sin(1.0)) == pytest.approx(1.6829, abs=5e-5)

    def test_conjugate_symmetry_preserved(self, spectrum30, reference_model):
        sensors = (0.3, 1.3)
        grouped = np.stack([grouped_amplitudes(reference_model, th)
                            for th in sensors])
        coeffs, _ = split_multiplicity(grouped, spectrum30, sensors, CFG)
        for pc in coeffs:
            assert pc.is_real_field(spectrum30, tol=1e-8)

    def test_geometry_guard_names_m(self, spectrum30, reference_model):
        sensors = (0.3, 0.3 + math.pi / 2)  # sin(2 * pi/2) = 0
        grouped = np.stack([grouped_amplitudes(reference_model, th)
                            for th in sensors])
        with pytest.raises(SensorGeometryError) as err:
            split_multiplicity(grouped, spectrum30, sensors, CFG)
        assert err.value.m == 2


class TestRefineJoint:
    def test_exact_initial_is_stationary(self, spectrum30, reference_model,
                                          reference_traces):
        initial = ReconstructionResult(
            alpha_hat=0.75, cuts_hat=[0.2, 1.2],
            coeffs_hat=list(reference_model.piece_coeffs), K_hat=2,
            residual_norm=0.0, stage_log=[], condition_report={})
        refined = refine_joint(initial, reference_traces, spectrum30, CFG)
        assert refined.alpha_hat == pytest.approx(0.75, abs=1e-12)
        assert refined.cuts_hat[0] == pytest.approx(0.2, abs=1e-10)
        assert refined.cuts_hat[1] == pytest.approx(1.2, abs=1e-10)
        assert refined.residual_norm <= 1e-12

    def test_monotone_on_noisy_data(self, spectrum30, reference_model,
                                    reference_traces):
        noisy = _noisy(reference_traces, 0.01, 7)
        initial = ReconstructionResult(
            alpha_hat=0.76, cuts_hat=[0.2, 1.19],
            coeffs_hat=list(reference_model.piece_coeffs), K_hat=2,
            residual_norm=1.0, stage_log=[], condition_report={})
        refined = refine_joint(initial, noisy, spectrum30, CFG)
        log = dict(refined.stage_log)["refine_joint"]
        assert log["final_residual"] <= log["initial_residual"]


class TestReconstructPipeline:
    def test_k1_model_yields_k1(self, spectrum30, reference_grid):
        p1 = make_coeffs(spectrum30, REF_PIECE_1)
        model = SourceModel(alpha=0.8, cuts=(0.3, math.inf), piece_coeffs=(p1,),
                            spectrum=spectrum30)
        traces = tuple(flux_trace(model, th, reference_grid) for th in (0.3, 1.3))
        res = reconstruct(traces, spectrum30, CFG)
        assert res.K_hat == 1
        assert abs(res.alpha_hat - 0.8) <= 1e-3
        assert abs(res.cuts_hat[0] - 0.3) <= 2e-3

    def test_scale_equivariance(self, spectrum30, reference_grid):
        p1 = make_coeffs(spectrum30, REF_PIECE_1)
        p2 = make_coeffs(spectrum30, REF_PIECE_2)
        cfg = InversionConfig(changepoint_min_gap=0.3, refine=False)
        results = []
        for scale in (1.0, 7.5):
            pieces = tuple(
                make_coeffs(spectrum30, {mk: scale * v for mk, v in d.items()})
                for d in (REF_PIECE_1, REF_PIECE_2))
            model = SourceModel(alpha=0.75, cuts=(0.2, 1.2, math.inf),
                                piece_coeffs=pieces, spectrum=spectrum30)
            traces = tuple(flux_trace(model, th, reference_grid)
                           for th in (0.3, 1.3))
            results.append(reconstruct(traces, spectrum30, cfg))
        a, b = results
        assert a.alpha_hat == pytest.approx(b.alpha_hat, abs=1e-9)
        assert a.cuts_hat == pytest.approx(b.cuts_hat, abs=1e-12)
        for pa, pb in zip(a.coeffs_hat, b.coeffs_hat):
            assert np.max(np.abs(7.5 * pa.values - pb.values)) <= 1e-6 * \
                np.max(np.abs(pb.values))

    def test_conjugate_closure(self, spectrum30, reference_traces):
        res = reconstruct(reference_traces, spectrum30, CFG)
        for pc in res.coeffs_hat:
            assert pc.is_real_field(spectrum30, tol=1e-8)

    def test_sensor_margin_guard(self, spectrum30, reference_model,
                                 reference_grid):
        traces = tuple(flux_trace(reference_model, th, reference_grid)
                       for th in (0.3, 0.3 + math.pi / 2))
        with pytest.raises(SensorGeometryError):
            reconstruct(traces, spectrum30, CFG)

    def test_sensor_count_guard(self, reference_traces, spectrum30):
        with pytest.raises(ValidationError):
            reconstruct(reference_traces[:1], spectrum30, CFG)

    def test_spurious_cut_is_merged(self, spectrum30, reference_grid):
        # a K=1 signal with an aggressive detector setting must still come
        # back as K=1 after degenerate-piece pruning
        p1 = make_coeffs(spectrum30, REF_PIECE_1)
        model = SourceModel(alpha=0.75, cuts=(0.2, math.inf), piece_coeffs=(p1,),
                            spectrum=spectrum30)
        traces = tuple(flux_trace(model, th, reference_grid) for th in (0.3, 1.3))
        res = reconstruct(traces, spectrum30,
                          InversionConfig(changepoint_min_gap=0.15, refine=False))
        assert res.K_hat == 1

    def test_result_json_schema(self, spectrum30, reference_traces):
        res = reconstruct(reference_traces, spectrum30,
                          InversionConfig(changepoint_min_gap=0.3, refine=False))
        import json
        doc = json.loads(result_to_json(res, spectrum30))
        assert set(doc) == {"alpha_hat", "cuts_hat", "K_hat", "coeffs",
                            "residual_norm", "condition_report", "stage_log"}
        assert doc["K_hat"] == len(res.coeffs_hat)
        assert {row["piece"] for row in doc["coeffs"]} == {1, 2}

    def test_predicted_flux_matches_data_noiseless(self, spectrum30,
                                                   reference_traces):
        res = reconstruct(reference_traces, spectrum30, CFG)
        model_flux = predicted_flux(res, spectrum30, reference_traces[0].times,
                                    (0.3, 1.3))
        for mf, tr in zip(model_flux, reference_traces):
            assert np.max(np.abs(mf - tr.values)) <= 1e-8
