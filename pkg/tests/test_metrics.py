import numpy as np
import pytest

from felab import metrics as M
from felab import signals as S
from felab.metrics import MetricError, SignalOutOfRange
from felab.signals import Modulation


def awgn_symbols(rng, snr_db, n, mod=Modulation.QAM64):
    sym = S.constellation(mod)[rng.integers(0, mod.order, n)]
    sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
    noise = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return sym + noise, sym


class TestCountBer:
    def test_equal_inputs_zero(self, rng):
        _, sym = awgn_symbols(rng, 30, 1000)
        assert M.count_ber(sym, sym, Modulation.QAM64) == 0.0

    def test_single_gray_neighbor_flip(self):
        mod = Modulation.QAM64
        pts = S.constellation(mod)
        sym = np.tile(pts[0], 1000)
        rec = sym.copy()
        # move one symbol to an adjacent level on one axis: one bit flips
        d = 2 / np.sqrt(42)
        rec[137] = rec[137] - d
        assert M.count_ber(rec, sym, mod) == pytest.approx(1 / 6000)

    def test_monte_carlo_matches_analytic_formula(self, rng):
        n = 1_000_000
        rec, sym = awgn_symbols(rng, 18.0, n)
        ber = M.count_ber(rec, sym, Modulation.QAM64)
        assert ber == pytest.approx(M.analytic_ber(18.0, Modulation.QAM64), rel=0.05)

    def test_length_mismatch_rejected(self):
        with pytest.raises(MetricError, match="mismatch"):
            M.count_ber(np.ones(3, complex), np.ones(4, complex), Modulation.QPSK)


class TestBerToSnr:
    @pytest.mark.parametrize("snr_db", [12.0, 18.0, 24.0])
    def test_awgn_loopback_within_0p2_db(self, rng, snr_db):
        rec, sym = awgn_symbols(rng, snr_db, 1_000_000)
        ber = M.count_ber(rec, sym, Modulation.QAM64)
        assert M.ber_to_snr(ber, Modulation.QAM64) == pytest.approx(snr_db, abs=0.2)

    def test_monotonicity(self):
        mod = Modulation.QAM64
        snrs = [M.ber_to_snr(b, mod) for b in (1e-4, 1e-3, 1e-2, 1e-1)]
        assert all(a > b for a, b in zip(snrs, snrs[1:]))

    def test_inverse_consistency(self):
        mod = Modulation.QAM64
        for snr in np.arange(5.0, 25.5, 2.5):
            back = M.ber_to_snr(M.analytic_ber(snr, mod), mod)
            assert back == pytest.approx(snr, abs=1e-3)

    def test_out_of_range_rejected(self):
        with pytest.raises(SignalOutOfRange):
            M.ber_to_snr(0.0, Modulation.QAM64)
        with pytest.raises(SignalOutOfRange):
            M.ber_to_snr(0.5, Modulation.QAM64)


class TestEvmSnr:
    def test_equal_inputs_infinite(self, rng):
        _, sym = awgn_symbols(rng, 20, 100)
        assert M.evm_snr(sym, sym) == np.inf

    def test_half_power_error(self):
        # error with half the reference power, already least-squares optimal
        # (scalar fit = 1), so the formula reads off -10 log10(1/2)
        n = 1000
        ref = np.ones(n, complex)
        u = 0.5 * np.exp(2j * np.pi * np.arange(n) / n)  # orthogonal, power 1/4
        rec = 0.5 * ref + u
        assert M.evm_snr(rec, ref) == pytest.approx(10 * np.log10(2), abs=1e-6)

    def test_awgn_20db(self, rng):
        rec, sym = awgn_symbols(rng, 20.0, 1_000_000)
        assert M.evm_snr(rec, sym) == pytest.approx(20.0, abs=0.1)

    def test_agreement_with_ber_snr_in_awgn(self, rng):
        for snr in (14.0, 18.0, 24.0):
            rec, sym = awgn_symbols(rng, snr, 1_000_000)
            ber_snr = M.ber_to_snr(M.count_ber(rec, sym, Modulation.QAM64), Modulation.QAM64)
            assert abs(M.evm_snr(rec, sym) - ber_snr) < 0.3

    def test_zero_reference_rejected(self):
        with pytest.raises(MetricError, match="reference power"):
            M.evm_snr(np.ones(4, complex), np.zeros(4, complex))


class TestChannelReport:
    def test_fallback_to_evm_when_error_free(self, rng):
        _, sym = awgn_symbols(rng, 30, 4096)
        rep = M.channel_report(0, sym * np.exp(0.3j), sym, Modulation.QAM64)
        assert rep.snr_source == "evm"
        assert rep.ber == 0.0

    def test_ber_source_with_errors(self, rng):
        rec, sym = awgn_symbols(rng, 15.0, 20000)
        rep = M.channel_report(2, rec, sym, Modulation.QAM64)
        assert rep.snr_source == "ber"
        assert rep.channel == 2
        assert rep.snr_eff_db == pytest.approx(15.0, abs=0.5)

    def test_scalar_fit_absorbs_phase_and_scale(self, rng):
        rec, sym = awgn_symbols(rng, 18.0, 100000)
        rot = rec * 1.7 * np.exp(1j * 0.9)
        a = M.channel_report(0, rec, sym, Modulation.QAM64)
        b = M.channel_report(0, rot, sym, Modulation.QAM64)
        assert a.ber == b.ber
        assert a.evm_db == pytest.approx(b.evm_db, abs=1e-9)
