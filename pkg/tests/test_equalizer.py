import numpy as np
import pytest
import torch

from felab import equalizer as E
from felab import signals as S
from felab.channel import FiberParams
from felab.equalizer import EqualizerError, EqualizerParams, EqualizerSpec
from felab.signals import Modulation, SignalGrid

BAUD = 32e9


def small_spec(**kw):
    base = dict(
        n_ch=3, steps_per_span=1, spans=2, s_spm=7, s_xpm=11, s_cd=3,
        delta_cd_ps_nm=4.25, n_fft=1024, overlap_m=512, sps_q=2,
        fiber=FiberParams(length_km=60.0), spacing=40e9, baud_rate=BAUD,
    )
    base.update(kw)
    return EqualizerSpec(**base)


def zero_params(spec, rng=None, random_h=False):
    ns, c = spec.n_steps, spec.n_ch
    if random_h and rng is not None:
        h_in = torch.from_numpy(
            rng.standard_normal((ns, c, spec.s_cd)) + 1j * rng.standard_normal((ns, c, spec.s_cd))
        )
        h_out = torch.from_numpy(
            rng.standard_normal((ns, c, spec.s_cd)) + 1j * rng.standard_normal((ns, c, spec.s_cd))
        )
    else:
        h_in = torch.zeros(ns, c, spec.s_cd, dtype=torch.complex128)
        h_out = torch.zeros(ns, c, spec.s_cd, dtype=torch.complex128)
        h_in[:, :, spec.s_cd // 2] = 1
        h_out[:, :, spec.s_cd // 2] = 1
    return EqualizerParams(
        alpha=torch.zeros(ns, c, spec.s_spm, dtype=torch.float64),
        beta=torch.zeros(ns, c, max(c - 1, 0), spec.s_xpm, dtype=torch.float64),
        h_in=h_in,
        h_out=h_out,
    )


def shaped_channels(rng, spec, n_sym):
    offs = S.channel_offsets(spec.n_ch, spec.spacing)
    chans = []
    for i in range(spec.n_ch):
        fr = S.map_symbols(S.random_bits(rng, 6 * n_sym), Modulation.QAM64, BAUD)
        g = S.shape_pulses(fr, spec.sps_q, 0.1)
        chans.append(g.samples)
    return torch.from_numpy(np.stack(chans))


def analytic_cdc(x, spec):
    """Whole-stream analytic CD + walk-off compensation (independent path)."""
    L = x.shape[-1]
    om = 2 * np.pi * np.fft.fftfreq(L, 1 / spec.sample_rate)
    beta2 = spec.fiber.beta2_s2_m
    z = spec.spans * spec.fiber.length_km * 1e3
    out = []
    for i, off in enumerate(S.channel_offsets(spec.n_ch, spec.spacing)):
        h = np.exp(-1j * beta2 / 2 * (om + 2 * np.pi * off) ** 2 * z)
        out.append(np.fft.ifft(np.fft.fft(x[i].numpy()) * h))
    return torch.from_numpy(np.stack(out))


class TestSpecValidation:
    def test_even_taps_rejected(self):
        with pytest.raises(EqualizerError, match="odd"):
            small_spec(s_spm=6)

    def test_overlap_bounds(self):
        with pytest.raises(EqualizerError, match="overlap"):
            small_spec(overlap_m=1024, n_fft=1024)

    def test_delta_exceeding_step_rejected(self):
        with pytest.raises(EqualizerError, match="more than one step"):
            E.build_linear_stages(small_spec(delta_cd_ps_nm=17.0 * 61))

    def test_param_shape_mismatch_rejected(self):
        spec = small_spec()
        params = zero_params(spec)
        bad = EqualizerParams(
            alpha=params.alpha[:, :, :-2], beta=params.beta,
            h_in=params.h_in, h_out=params.h_out,
        )
        with pytest.raises(EqualizerError, match="alpha shape"):
            bad.validate_for(spec)


class TestLinearStageBank:
    def test_pre_stages_exactly_allpass(self):
        st = E.build_linear_stages(small_spec())
        assert float((st.pre.abs() - 1).abs().max()) < 1e-12

    def test_full_path_allpass_in_band(self):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        freqs = np.fft.fftfreq(spec.n_fft, 1 / spec.sample_rate)
        ib = torch.from_numpy(np.abs(freqs) <= st.band_hz)
        assert float((st.full[:, ib].abs() - 1).abs().max()) < 1e-9
        assert float((st.post[:, :, ib].abs() - 1).abs().max()) < 1e-9

    def test_telescoping_pointwise(self):
        st = E.build_linear_stages(small_spec())
        dev = (st.pre * st.post - st.full.unsqueeze(0)).abs()
        assert float(dev.max()) < 1e-12

    def test_delta_zero_center_channel_full_link_cdc(self):
        # with no delegated dispersion, the last branch pre-stage of the
        # center channel telescopes to nearly the full-link compensation
        spec = small_spec(delta_cd_ps_nm=0.0, steps_per_span=4, spans=1, n_ch=1)
        st = E.build_linear_stages(spec)
        freqs = np.fft.fftfreq(spec.n_fft, 1 / spec.sample_rate)
        om = 2 * np.pi * freqs
        ib = np.abs(freqs) <= st.band_hz
        # branch N_s sits at (N_s - 1/2)/N_s of the link; compare phases there
        z = (spec.n_steps - 0.5) / spec.n_steps * spec.fiber.length_km * 1e3
        got = st.pre[-1, 0].numpy()[ib]
        phase = np.angle(got * np.exp(1j * spec.fiber.beta2_s2_m / 2 * om[ib] ** 2 * z))
        # only a pure delay (linear phase) may remain; unwrap in ascending
        # frequency order
        order = np.argsort(om[ib])
        ph = np.unwrap(phase[order])
        fit = np.polyfit(om[ib][order], ph, 1)
        resid = ph - np.polyval(fit, om[ib][order])
        assert np.max(np.abs(resid)) < 1e-6

    def test_linear_round_trip_on_simulated_link(self, rng):
        # gamma=0 link + H_full restores the transmitted channels
        from felab import channel as C

        spec = small_spec()
        chans = []
        offs = S.channel_offsets(3, 40e9)
        waves = []
        for i in range(3):
            fr = S.map_symbols(S.random_bits(rng, 6 * 2048), Modulation.QAM64, BAUD)
            g = S.shape_pulses(fr, 2, 0.1)
            waves.append(g.samples)
            chans.append(SignalGrid(g.samples, g.sample_rate, offs[i]))
        ens = S.WdmEnsemble(tuple(chans), 40e9, BAUD)
        fib = FiberParams(length_km=60.0, gamma_per_w_km=0.0)
        from felab.channel import LinkSpec

        wb = C.transmit(ens, LinkSpec(spans=2, fiber=fib), 0.0, seed=3,
                        step_km=5.0, noise_on=False)
        rx_ens = S.demux(wb, S.FrequencyPlan(3, 40e9, BAUD), 2)
        rx = torch.from_numpy(np.stack([c.samples for c in rx_ens.channels]))
        spec0 = small_spec(fiber=fib)
        st = E.build_linear_stages(spec0)
        res = E.equalize_stream(rx, zero_params(spec0), spec0, st)
        t = res.edge_trim
        for i in range(3):
            got = res.samples[i, t:-t].numpy()
            ref = waves[i][t:-t] * 10 ** (0.0 / 20)
            ref = ref * np.sqrt(1e-3 / np.mean(np.abs(waves[i]) ** 2))
            e = got - ref
            evm = 10 * np.log10(np.mean(np.abs(e) ** 2) / np.mean(np.abs(ref) ** 2))
            assert evm < -40


class TestActivations:
    def test_spm_zero_taps(self, rng):
        y = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        out = E.spm_activation(y, np.zeros(5), 1.3, 21.5)
        assert np.all(out == 0)

    def test_spm_center_tap_constant_field(self):
        a = 0.3 - 0.4j
        y = np.full(16, a)
        taps = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        out = E.spm_activation(y, taps, 1.3, 21.5)
        expect = -1j * 1.3 * 21.5 * a * abs(a) ** 2
        assert np.max(np.abs(out[2:-2] - expect)) < 1e-14

    def test_xpm_no_neighbors(self, rng):
        y = rng.standard_normal(16) + 0j
        out = E.xpm_activation(y, [], np.zeros((0, 5)), 1.3, 21.5)
        assert np.all(out == 0)

    def test_xpm_center_tap_constant_fields(self):
        a, b = 0.5 + 0.1j, -0.2 + 0.6j
        y = np.full(16, a)
        nb = [np.full(16, b)]
        taps = np.zeros((1, 5))
        taps[0, 2] = 1.0
        out = E.xpm_activation(y, nb, taps, 1.3, 21.5)
        expect = -2j * 1.3 * 21.5 * a * abs(b) ** 2
        assert np.max(np.abs(out[2:-2] - expect)) < 1e-14

    def test_neighbor_shape_mismatch_rejected(self, rng):
        y = rng.standard_normal(8) + 0j
        with pytest.raises(EqualizerError, match="neighbors"):
            E.xpm_activation(y, [y, y], np.zeros((1, 3)), 1.3, 21.5)

    @pytest.mark.parametrize("trial", range(3))
    def test_brute_force_oracles(self, rng, trial):
        n, l, m = 50, 2, 3
        y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        a_taps = rng.standard_normal(2 * l + 1)
        spm = E.spm_activation(y, a_taps, 1.3, 21.5)
        p = np.abs(y) ** 2
        ref = np.zeros(n, complex)
        for i in range(n):
            acc = 0.0
            for ci, c in enumerate(range(-l, l + 1)):
                if 0 <= i + c < n:
                    acc += a_taps[ci] * p[i + c]
            ref[i] = -1j * 1.3 * 21.5 * y[i] * acc
        assert np.max(np.abs(spm - ref)) < 1e-12 * max(1.0, np.max(np.abs(ref)))

        nb = [rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(2)]
        b_taps = rng.standard_normal((2, 2 * m + 1))
        xpm = E.xpm_activation(y, nb, b_taps, 1.3, 21.5)
        ref = np.zeros(n, complex)
        for i in range(n):
            acc = 0.0
            for r in range(2):
                pr = np.abs(nb[r]) ** 2
                for ci, c in enumerate(range(-m, m + 1)):
                    if 0 <= i + c < n:
                        acc += b_taps[r, ci] * pr[i + c]
            ref[i] = -2j * 1.3 * 21.5 * y[i] * acc
        assert np.max(np.abs(xpm - ref)) < 1e-12 * max(1.0, np.max(np.abs(ref)))


class TestFirFieldFilter:
    def test_identity(self, rng):
        y = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        out = E.fir_field_filter(y, np.array([0, 1, 0], complex))
        assert np.array_equal(out, y)

    def test_delayed_delta_shifts(self, rng):
        y = rng.standard_normal(32) + 0j
        taps = np.zeros(5, complex)
        taps[3] = 1.0  # one right of center: convolution delays by 1
        out = E.fir_field_filter(y, taps)
        assert np.array_equal(out[1:], y[:-1])
        assert out[0] == 0

    def test_matches_numpy_convolve(self, rng):
        y = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        taps = rng.standard_normal(7) + 1j * rng.standard_normal(7)
        out = E.fir_field_filter(y, taps)
        ref = np.convolve(y, taps, mode="full")[3:-3]
        assert np.max(np.abs(out - ref)) < 1e-13

    def test_even_taps_rejected(self, rng):
        with pytest.raises(EqualizerError, match="odd"):
            E.fir_field_filter(np.ones(8, complex), np.ones(4, complex))

    def test_cd_design_cascade_near_identity(self, rng):
        from felab.training import design_cd_fir

        fib = FiberParams()
        h_p = design_cd_fir(7, 4.25, fib, 64e9, 17.6e9)
        h_m = design_cd_fir(7, -4.25, fib, 64e9, 17.6e9)
        fr = S.map_symbols(S.random_bits(rng, 6 * 512), Modulation.QAM64, BAUD)
        chirped = S.shape_pulses(fr, 2, 0.1).samples
        once = E.fir_field_filter(chirped, h_p)
        back = E.fir_field_filter(once, h_m)
        e = back[16:-16] - chirped[16:-16]
        evm = 10 * np.log10(np.mean(np.abs(e) ** 2) / np.mean(np.abs(chirped) ** 2))
        assert evm < -30


class TestBranchForward:
    def test_zero_taps_zero_output(self, rng):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        params = zero_params(spec, rng, random_h=True)
        x = torch.from_numpy(
            rng.standard_normal((3, spec.n_fft)) + 1j * rng.standard_normal((3, spec.n_fft))
        )
        out = E.branch_forward(torch.fft.fft(x, dim=-1), 0, params, spec, st)
        assert float(out.abs().max()) == 0.0

    def test_single_channel_reference_oracle(self, rng):
        spec = small_spec(n_ch=1, delta_cd_ps_nm=0.0, s_spm=5)
        st = E.build_linear_stages(spec)
        params = zero_params(spec)
        alpha = rng.standard_normal((spec.n_steps, 1, 5))
        params.alpha += torch.from_numpy(alpha)
        x = 0.03 * (rng.standard_normal((1, spec.n_fft)) + 1j * rng.standard_normal((1, spec.n_fft)))
        xt = torch.from_numpy(x)
        for k in range(spec.n_steps):
            out = E.branch_forward(torch.fft.fft(xt, dim=-1), k, params, spec, st).numpy()[0]
            # independent straightforward implementation
            pre = st.pre[k, 0].numpy()
            post = st.post[k, 0].numpy()
            y = np.fft.ifft(np.fft.fft(x[0]) * pre)
            p = np.abs(y) ** 2
            acc = np.zeros(spec.n_fft)
            for ci, c in enumerate(range(-2, 3)):
                if c < 0:
                    acc[-c:] += alpha[k, 0, ci] * p[: c]
                elif c > 0:
                    acc[:-c] += alpha[k, 0, ci] * p[c:]
                else:
                    acc += alpha[k, 0, ci] * p
            ref = np.fft.fft(-1j * st.gamma_leff * y * acc) * post
            assert np.max(np.abs(out - ref)) < 1e-12

    def test_phase_covariance(self, rng):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        params = zero_params(spec, rng, random_h=True)
        params.alpha += torch.from_numpy(rng.standard_normal(tuple(params.alpha.shape)))
        params.beta += torch.from_numpy(rng.standard_normal(tuple(params.beta.shape)))
        x = torch.from_numpy(
            0.05 * (rng.standard_normal((3, spec.n_fft)) + 1j * rng.standard_normal((3, spec.n_fft)))
        )
        base = E.equalize_block(x, params, spec, st)
        rot = E.equalize_block(x * np.exp(1j * 0.83), params, spec, st)
        assert float((rot - base * np.exp(1j * 0.83)).abs().max()) < 1e-12


class TestEqualizeBlockAndStream:
    def test_wrong_block_shape_rejected(self, rng):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        with pytest.raises(EqualizerError, match="block must be"):
            E.equalize_block(torch.zeros(3, 100, dtype=torch.complex128), zero_params(spec), spec, st)

    def test_fft_pair_count(self, rng):
        spec = small_spec(steps_per_span=2)
        st = E.build_linear_stages(spec)
        params = zero_params(spec)
        x = torch.from_numpy(
            rng.standard_normal((3, spec.n_fft)) + 1j * rng.standard_normal((3, spec.n_fft))
        )
        E.FFT_COUNTER.reset()
        E.equalize_block(x, params, spec, st)
        pairs_per_channel = E.FFT_COUNTER.pairs / spec.n_ch
        assert pairs_per_channel == spec.n_steps + 1
        assert E.FFT_COUNTER.forward == E.FFT_COUNTER.inverse

    def test_zero_input_zero_output(self):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        rx = torch.zeros(3, 4 * spec.n_fft, dtype=torch.complex128)
        res = E.equalize_stream(rx, zero_params(spec), spec, st)
        assert float(res.samples.abs().max()) == 0.0

    def test_shorter_than_block_rejected(self):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        rx = torch.zeros(3, spec.n_fft - 1, dtype=torch.complex128)
        with pytest.raises(EqualizerError, match="shorter than one block"):
            E.equalize_stream(rx, zero_params(spec), spec, st)

    def test_linear_path_equals_analytic_cdc(self, rng):
        # acceptance-style: zero NL taps, random field filters; the stream
        # equals whole-signal analytic CD compensation to 1e-9
        spec = small_spec()
        st = E.build_linear_stages(spec)
        rx = shaped_channels(rng, spec, 4096)
        params = zero_params(spec, rng, random_h=True)
        res = E.equalize_stream(rx, params, spec, st)
        ref = analytic_cdc(rx, spec)
        t = res.edge_trim
        err = (res.samples - ref).abs()[:, t:-t]
        assert float(err.max()) < 1e-9

    def test_blockwise_matches_giant_fft_processing(self, rng):
        # one giant FFT over the whole signal with the analytic transfer
        # (the signal is band-limited on its own grid, where the blockwise
        # linear path is exact)
        spec = small_spec()
        st = E.build_linear_stages(spec)
        rx = shaped_channels(rng, spec, 3072)
        params = zero_params(spec)
        res = E.equalize_stream(rx, params, spec, st)
        L = rx.shape[-1]
        om = 2 * np.pi * np.fft.fftfreq(L, 1 / spec.sample_rate)
        beta2 = spec.fiber.beta2_s2_m
        z = spec.spans * spec.fiber.length_km * 1e3
        t = res.edge_trim
        for i, off in enumerate(S.channel_offsets(spec.n_ch, spec.spacing)):
            h = np.exp(-1j * beta2 / 2 * (om + 2 * np.pi * off) ** 2 * z)
            big = np.fft.ifft(np.fft.fft(rx[i].numpy()) * h)
            err = np.abs(res.samples[i].numpy()[t:-t] - big[t:-t])
            assert err.max() < 1e-9

    def test_single_block_input_equals_block_valid_region(self, rng):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        params = zero_params(spec, rng, random_h=True)
        hop = spec.valid_per_block
        rx = shaped_channels(rng, spec, spec.n_fft // 2)  # exactly one block long
        res = E.equalize_stream(rx, params, spec, st)
        fr = E.StreamFraming(rx.shape[-1], spec.n_fft, spec.overlap_m, st.bulk_delay)
        xp = fr.pad(rx)
        blk = E.equalize_block(xp[:, fr.block_slice(0)], params, spec, st)
        start, stop = fr.block_positions(0)
        got = res.samples[:, max(start, 0) : min(stop, rx.shape[-1])]
        want = blk[:, -start : -start + got.shape[-1]] if start < 0 else blk[:, : got.shape[-1]]
        assert float((got - want).abs().max()) == 0.0

    def test_linear_stages_preserve_band_limited_power(self, rng):
        # every FD stage is all-pass on the signal band: applying it to an
        # in-band block preserves power to 1e-9 relative
        spec = small_spec()
        st = E.build_linear_stages(spec)
        freqs = np.fft.fftfreq(spec.n_fft, 1 / spec.sample_rate)
        ib = np.abs(freqs) <= st.band_hz
        spectrum = np.zeros((spec.n_ch, spec.n_fft), complex)
        spectrum[:, ib] = rng.standard_normal((spec.n_ch, ib.sum())) + 1j * rng.standard_normal(
            (spec.n_ch, ib.sum())
        )
        y = torch.from_numpy(np.fft.ifft(spectrum, axis=-1))
        p_in = float((y.abs() ** 2).sum())
        yf = torch.fft.fft(y, dim=-1)
        for stage in [st.full] + [st.pre[k] for k in range(st.n_steps)] + [
            st.post[k] for k in range(st.n_steps)
        ]:
            out = torch.fft.ifft(yf * stage, dim=-1)
            p_out = float((out.abs() ** 2).sum())
            assert p_out == pytest.approx(p_in, rel=1e-9)

    def test_stream_determinism(self, rng):
        spec = small_spec()
        st = E.build_linear_stages(spec)
        rx = shaped_channels(rng, spec, 2048)
        params = zero_params(spec, rng, random_h=True)
        a = E.equalize_stream(rx, params, spec, st).samples
        b = E.equalize_stream(rx, params, spec, st).samples
        assert torch.equal(a, b)
