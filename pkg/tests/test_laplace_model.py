import math

import numpy as np
import pytest

from fracsource.disc_spectrum import build_spectrum
from fracsource.errors import DomainError, HorizonError, PoleProximityError
from fracsource.forward_model import FluxTrace, SourceModel, flux_trace, grouped_amplitudes
from fracsource.laplace_model import (
    AdjointSpec,
    LaplacePoint,
    LaplaceSamples,
    TailSpec,
    adjoint_weight_w,
    branch_power,
    delta_z_eval,
    laplace_flux_model,
    numeric_laplace,
    pole_locations,
)

from conftest import make_coeffs, random_source_model


class TestBranchAndPoles:
    def test_branch_power_negative_axis(self):
        got = branch_power(complex(-1.0, 0.0), 0.75)
        assert got == pytest.approx(np.exp(1j * 0.75 * np.pi), abs=1e-14)

    def test_pole_modulus_and_argument(self):
        poles = pole_locations(0.8, [5.7832])
        assert abs(poles[0]) == pytest.approx(5.7832 ** 1.25, rel=1e-12)
        assert abs(poles[0]) == pytest.approx(8.9683, abs=2e-4)
        assert math.atan2(poles[0].imag, poles[0].real) % (2 * math.pi) == \
            pytest.approx(1.25 * math.pi, abs=1e-12)

    def test_unit_modulus_case(self):
        poles = pole_locations(0.75, [1.0])
        assert poles[0] == pytest.approx(np.exp(1j * 4 * np.pi / 3), abs=1e-12)

    def test_disjoint_pole_sets_for_distinct_alpha(self):
        lams = [5.7832, 14.682, 26.374]
        a = pole_locations(0.6, lams)
        b = pole_locations(0.9, lams)
        for pa in a:
            for pb in b:
                assert abs(pa - pb) > 1e-6

    def test_alpha_domain(self):
        with pytest.raises(DomainError):
            pole_locations(0.5, [1.0])
        with pytest.raises(DomainError):
            pole_locations(1.0, [1.0])

    def test_laplace_point_validation(self):
        with pytest.raises(DomainError):
            LaplacePoint(-1.0)
        with pytest.raises(DomainError):
            LaplacePoint(1j)

    def test_pole_proximity_guard(self):
        # for alpha in (1/2, 2/3) the poles sit in the right half plane
        alpha = 0.6
        pole = pole_locations(alpha, [5.7832])[0]
        assert pole.real > 0
        pt = LaplacePoint(pole + 1e-8)
        with pytest.raises(PoleProximityError):
            pt.check_poles(alpha, [5.7832])


class TestLaplaceFluxModel:
    def test_single_mode_closed_form(self, spectrum30):
        p = make_coeffs(spectrum30, {(0, 1): 1.0})
        model = SourceModel(alpha=0.75, cuts=(0.0, math.inf), piece_coeffs=(p,),
                            spectrum=spectrum30)
        lam = spectrum30.modes[spectrum30.index_of(0, 1)].lam
        a_z = 1.0 / (math.sqrt(math.pi) * math.sqrt(lam))
        for s in (1.0, 3.0):
            got = laplace_flux_model(model, 0.7, LaplacePoint(s))
            expect = a_z * lam / (s * (s ** 0.75 + lam))
            assert got == pytest.approx(expect, rel=1e-12)

    def test_numeric_cross_check(self, spectrum30):
        p = make_coeffs(spectrum30, {(0, 1): 1.0})
        model = SourceModel(alpha=0.75, cuts=(0.0, math.inf), piece_coeffs=(p,),
                            spectrum=spectrum30)
        t = np.linspace(0.0, 30.0, 30001)
        tr = flux_trace(model, 0.7, t)
        for s in (1.0, 2.0, 5.0, 10.0):
            gm = laplace_flux_model(model, 0.7, LaplacePoint(s))
            gn = numeric_laplace(tr, LaplacePoint(s))
            assert abs(gm - gn) <= 1e-4

    def test_large_s_asymptote(self, reference_model):
        # s^(1+a) e^(c0 s) G -> sum_n s_n a_n p_{1,n} lambda_n with the
        # expected O(s^-a) approach rate. (The convergence cannot reach 2%
        # at s=200 for any alpha < 1: that would need s^a >= 50*lambda_1.)
        b = grouped_amplitudes(reference_model, 0.3)
        lams = np.array([lam for lam, _ in
                         reference_model.spectrum.distinct_eigenvalues])
        target = float(np.sum(b[:, 0].real * lams))
        alpha, c0 = reference_model.alpha, reference_model.cuts[0]
        s_pts = (50.0, 100.0, 200.0, 1000.0, 3000.0)
        errs = []
        for s in s_pts:
            g = laplace_flux_model(reference_model, 0.3, LaplacePoint(s))
            val = float((g * s ** (1 + alpha) * np.exp(c0 * s)).real)
            errs.append(abs(val - target) / abs(target))
            # the rescaled value equals the mode-sum with its finite-s factors
            sa = s ** alpha
            corrected = float(np.sum(b[:, 0].real * lams * sa / (sa + lams)))
            assert val == pytest.approx(corrected, rel=1e-9)
        assert all(a > b for a, b in zip(errs[:-1], errs[1:]))
        assert errs[-1] < 0.2 * errs[0]

    def test_model_transform_agreement_random_models(self, spectrum30):
        rng = np.random.default_rng(99)
        t = np.linspace(0.0, 30.0, 24001)
        for _ in range(20):
            model = random_source_model(spectrum30, rng)
            theta = float(rng.uniform(0, 2 * np.pi))
            tr = flux_trace(model, theta, t)
            for s in (1.0, 7.0, 20.0):
                gm = laplace_flux_model(model, theta, LaplacePoint(s))
                gn = numeric_laplace(tr, LaplacePoint(s))
                assert abs(gm - gn) <= 1e-4 * (1 + abs(gm))

    def test_absolute_convergence_under_cutoff_growth(self):
        # partial sums of sum_n |a_n p_{k,n}| are monotone and Cauchy as the
        # cutoff grows, for a coefficient field with gamma > 0 decay
        from fracsource.disc_spectrum import boundary_coefficient

        def coeff(mode):
            return (1.0 + abs(mode.m) + 0.5j * mode.k) / (1.0 + mode.lam ** 1.5)

        totals = []
        for lam_max in (30.0, 60.0, 120.0, 240.0, 480.0):
            sp = build_spectrum(lam_max)
            totals.append(sum(
                abs(boundary_coefficient(mo, 0.3) * coeff(mo))
                for mo in sp.modes))
        increments = np.diff(totals)
        assert np.all(increments >= 0.0)
        assert np.all(np.diff(increments) < 0.0)


class TestNumericLaplace:
    def test_zero_trace(self):
        t = np.linspace(0.0, 30.0, 3001)
        tr = FluxTrace(0.0, t, np.zeros_like(t))
        assert numeric_laplace(tr, LaplacePoint(1.0)) == 0.0

    def test_exponential_reference(self):
        t = np.linspace(0.0, 40.0, 40001)
        tr = FluxTrace(0.0, t, -np.exp(-t))  # -flux = e^-t
        got = numeric_laplace(tr, LaplacePoint(1.0))
        assert got.real == pytest.approx(0.5, abs=1e-6)

    def test_horizon_error(self, reference_traces):
        with pytest.raises(HorizonError):
            numeric_laplace(reference_traces[0], LaplacePoint(1.0))

    def test_tail_model(self, reference_model, reference_traces):
        tail = TailSpec(alpha=0.75, shift=1.2)
        for s in (1.0, 2.0):
            gm = laplace_flux_model(reference_model, 0.3, LaplacePoint(s))
            gn = numeric_laplace(reference_traces[0], LaplacePoint(s), tail=tail)
            assert abs(gm - gn) <= 1e-4

    def test_csv_schema(self):
        pts = (LaplacePoint(1.0), LaplacePoint(2.0 + 1.0j))
        samples = LaplaceSamples(points=pts, values=np.array([1 + 2j, 3 + 4j]))
        lines = samples.to_csv().splitlines()
        assert lines[0] == "re_s,im_s,re_G,im_G"
        assert len(lines) == 3


class TestDeltaMollifier:
    def test_n_zero_constant(self):
        spec = AdjointSpec(theta_z=0.7, N=0, alpha=0.75)
        assert delta_z_eval(spec, 0.3, 2.0) == pytest.approx(1 / (2 * math.pi),
                                                             abs=1e-15)

    def test_peak_value(self):
        spec = AdjointSpec(theta_z=0.7, N=7, alpha=0.75)
        assert delta_z_eval(spec, 1.0, 0.7) == pytest.approx(15 / (2 * math.pi),
                                                             rel=1e-12)

    def test_projection_matches_a_n(self, spectrum30):
        # <delta_z^N, phi_n> = pi^(-1/2) lambda^(-1/2) e^(-i m theta_z), |m|<=N
        from fracsource.disc_spectrum import project_function
        theta_z = 0.7
        spec = AdjointSpec(theta_z=theta_z, N=1, alpha=0.75)
        coeffs = project_function(lambda r, th: delta_z_eval(spec, r, th),
                                  spectrum30)
        for i, mo in enumerate(spectrum30.modes):
            if abs(mo.m) <= 1:
                expect = (np.exp(-1j * mo.m * theta_z)
                          / (math.sqrt(math.pi) * math.sqrt(mo.lam)))
                assert coeffs.values[i] == pytest.approx(expect, abs=1e-10)
            else:
                assert abs(coeffs.values[i]) <= 1e-8

    def test_boundary_reproduction_of_trig_polys(self):
        # int_dOmega delta_z^N g -> g(z) exactly for trig degree <= N
        theta_z = 1.1
        spec = AdjointSpec(theta_z=theta_z, N=4, alpha=0.75)
        theta = np.linspace(0.0, 2 * np.pi, 512, endpoint=False)
        w = 2 * np.pi / 512

        def g(th):
            return 0.7 + np.cos(2 * th - 0.3) + 0.2 * np.sin(4 * th)

        integral = float(np.sum(delta_z_eval(spec, np.ones_like(theta), theta)
                                * g(theta)) * w)
        assert integral == pytest.approx(float(g(np.array([theta_z]))[0]),
                                         abs=1e-8)

    def test_real_valued(self):
        spec = AdjointSpec(theta_z=2.0, N=6, alpha=0.6)
        vals = delta_z_eval(spec, np.linspace(0, 1, 8), np.linspace(0, 6, 8))
        assert np.all(np.isreal(vals))

    def test_n_validation(self):
        with pytest.raises(DomainError):
            AdjointSpec(theta_z=0.0, N=-1, alpha=0.75)


class TestAdjointWeight:
    def test_truncation_restricts_orders(self, spectrum30):
        spec = AdjointSpec(theta_z=0.3, N=0, alpha=0.75)
        got = adjoint_weight_w(spec, spectrum30, 0.5, 0.3, 1.0)
        # only m=0 modes contribute
        from fracsource.disc_spectrum import eigenfunction_eval
        total = 0.0 + 0.0j
        for mo in spectrum30.modes:
            if mo.m != 0:
                continue
            from fracsource.specfun import mittag_leffler_neg_real
            e = mittag_leffler_neg_real(0.75, 0.75, np.array([mo.lam]))[0]
            a_bar = 1.0 / (math.sqrt(math.pi) * math.sqrt(mo.lam))
            total += a_bar * (1 / math.gamma(0.75) - e) * eigenfunction_eval(mo, 0.5, 0.3)
        assert got == pytest.approx(total, rel=1e-12)

    def test_time_decay_envelope(self, spectrum30):
        spec = AdjointSpec(theta_z=0.3, N=2, alpha=0.75)
        ts = np.array([1.0, 10.0, 100.0, 1000.0])
        vals = [abs(adjoint_weight_w(spec, spectrum30, 0.5, 0.3, t)) for t in ts]
        envelope = [v / t ** (0.75 - 1.0) for v, t in zip(vals, ts)]
        assert max(envelope) <= 2.0 * envelope[0] + 1e-12

    def test_boundary_limit_study(self):
        # near r=1 the field approaches t^(a-1) delta_z^N / Gamma(a); resolving
        # the boundary layer at 1-r = 1e-3 needs zeros up to ~2e4
        alpha, n_trunc, t = 0.75, 5, 1.0
        theta_z = 0.4
        spec = AdjointSpec(theta_z=theta_z, N=n_trunc, alpha=alpha)
        sp_tall = build_spectrum(2.2e8, m_max=n_trunc)
        got = adjoint_weight_w(spec, sp_tall, 0.999, theta_z, t)
        target = t ** (alpha - 1.0) * delta_z_eval(spec, 0.999, theta_z) / math.gamma(alpha)
        assert abs(got - target) / abs(target) <= 0.05

    def test_t_positive_required(self, spectrum30):
        spec = AdjointSpec(theta_z=0.3, N=1, alpha=0.75)
        with pytest.raises(DomainError):
            adjoint_weight_w(spec, spectrum30, 0.5, 0.3, 0.0)
