import unittest

import numpy as np

from codec import (CycleWord, Variant, make_general_unary, make_minimal_distortion, make_ternary4, make_sparse20,
                   make_duty_modulated, encode_values, encode_cycle)
from stream import Prbs15State, prbs15_bits
from waveform import (EdgeWaveform, JitterModel, serialize, serialize_slots, ideal_clock, sample, sample_many,
                      inject_jitter, measure, fit_sinusoid, eye_histogram, bathtub, period_ticks, to_ticks,
                      to_seconds)
from exceptions import InvalidWaveform, MixedWordLength, OutOfRange, EdgeReorder, TooFewEdges, InvalidParameter

F0 = 125e6
T = 8_000_000  # ticks of 1 fs at 125 MHz


def prbs_values(scheme, cycles, seed=0x1ACE):
    """
    PRBS15-driven symbol values. Ternary4 and Sparse20 get Idle where two bits are
    both 1; the duty-modulated family carries data words only, as a transmitter sends it.
    """
    bits, _ = prbs15_bits(Prbs15State(seed), 2 * cycles)
    pairs = bits.reshape(cycles, 2).astype(np.int64)
    if scheme.bits_per_cycle == 2:
        return pairs[:, 0] * 2 + pairs[:, 1]
    values = pairs[:, 0].copy()
    if scheme.idle is not None and scheme.variant != Variant.DUTY_MODULATED:
        values[(pairs[:, 0] == 1) & (pairs[:, 1] == 1)] = -1
    return values


class TestTimeBase(unittest.TestCase):
    def test_conversions(self):
        self.assertEqual(period_ticks(F0), T)
        self.assertEqual(period_ticks(F0, resolution_fs=1000), 8000)
        self.assertEqual(to_ticks(200e-12), 200_000)
        self.assertAlmostEqual(to_seconds(200_000), 200e-12)

    def test_bad_frequency(self):
        with self.assertRaises(InvalidParameter):
            period_ticks(0)


class TestEdgeWaveform(unittest.TestCase):
    def test_rejects_unordered_edges(self):
        with self.assertRaises(InvalidWaveform):
            EdgeWaveform(0, [10, 10, 20], 30)
        with self.assertRaises(InvalidWaveform):
            EdgeWaveform(0, [10, 40], 30)
        with self.assertRaises(InvalidWaveform):
            EdgeWaveform(2, [10], 30)

    def test_levels_and_edges(self):
        w = EdgeWaveform(1, [5, 10, 15, 20], 30)
        self.assertEqual(w.levels.tolist(), [0, 1, 0, 1])
        self.assertEqual(w.rising_edges().tolist(), [10, 20])
        self.assertEqual(w.falling_edges().tolist(), [5, 15])

    def test_shifted(self):
        w = EdgeWaveform(0, [5, 10], 20).shifted(7)
        self.assertEqual(w.times.tolist(), [12, 17])
        self.assertEqual(w.duration, 27)
        with self.assertRaises(InvalidParameter):
            w.shifted(-1)

    def test_from_levels_keeps_only_changes(self):
        w = EdgeWaveform.from_levels(np.array([10, 20, 30, 40]), np.array([0, 1, 1, 0]), 0, 50)
        self.assertEqual(w.times.tolist(), [20, 40])

    def test_sample_just_before(self):
        w = EdgeWaveform(0, [10, 20], 30)
        self.assertEqual(sample(w, 10), 0)
        self.assertEqual(sample(w, 11), 1)
        self.assertEqual(sample(w, 20), 1)
        self.assertEqual(sample(w, 30), 0)
        self.assertEqual(sample_many(w, [0, 10, 11, 21]).tolist(), [0, 0, 1, 0])
        with self.assertRaises(OutOfRange):
            sample(w, 31)
        with self.assertRaises(OutOfRange):
            sample_many(w, [-1])


class TestSerialize(unittest.TestCase):
    def test_single_word(self):
        w = serialize([CycleWord.from_string("0110")], F0)
        self.assertEqual(w.initial_level, 0)
        self.assertEqual(w.times.tolist(), [T // 4, T // 2 + T // 4])
        self.assertEqual(w.duration, T)

    def test_mixed_lengths(self):
        with self.assertRaises(MixedWordLength):
            serialize([CycleWord.from_string("010"), CycleWord.from_string("0110")], F0)

    def test_rising_edge_interval_is_one_period(self):
        for scheme in (make_general_unary(5, 3), make_minimal_distortion(16), make_ternary4(), make_sparse20()):
            slots = encode_values(scheme, prbs_values(scheme, 100_000))
            rising = serialize_slots(slots, F0).rising_edges()
            self.assertEqual(rising.size, 100_000, scheme.name)
            self.assertTrue(np.all(np.diff(rising) == T), scheme.name)
            self.assertEqual(int(rising[0]), T // scheme.n)

    def test_block_boundaries(self):
        # longer than one vectorised block
        scheme = make_minimal_distortion(3)
        slots = encode_values(scheme, prbs_values(scheme, 300_000))
        w = serialize_slots(slots, F0)
        levels = sample_many(w, np.arange(300_000) * T + 2 * T // 3 + 1)
        np.testing.assert_array_equal(levels, slots[:, 2])

    def test_midpoint_sample_recovers_data(self):
        for n in (3, 5, 7, 8, 16):
            scheme = make_minimal_distortion(n)
            data = np.array([0, 1, 1, 0, 1, 0, 0, 1])
            w = serialize([encode_cycle(scheme, int(b)) for b in data], F0)
            recovered = sample_many(w, w.rising_edges() + T // 2)
            np.testing.assert_array_equal(recovered, data, err_msg=f"n={n}")


class TestJitter(unittest.TestCase):
    def setUp(self):
        self.clock = ideal_clock(F0, 2000)

    def test_ideal_clock(self):
        self.assertEqual(self.clock.rising_edges()[0], T // 4)
        self.assertTrue(np.all(np.diff(self.clock.rising_edges()) == T))

    def test_ideal_model_is_identity(self):
        self.assertIs(inject_jitter(self.clock, JitterModel()), self.clock)

    def test_seeded(self):
        model = JitterModel(random_sigma=20e-12, seed=4)
        self.assertEqual(inject_jitter(self.clock, model), inject_jitter(self.clock, model))
        self.assertNotEqual(inject_jitter(self.clock, model), inject_jitter(self.clock, JitterModel(20e-12, seed=5)))

    def test_reorder(self):
        with self.assertRaises(EdgeReorder):
            inject_jitter(self.clock, JitterModel(random_sigma=3e-9, seed=1))

    def test_negative_sigma(self):
        with self.assertRaises(InvalidParameter):
            JitterModel(random_sigma=-1e-12)


class TestMeasure(unittest.TestCase):
    def test_ideal_stream(self):
        scheme = make_duty_modulated(20, 2)
        w = serialize_slots(encode_values(scheme, prbs_values(scheme, 2000)), F0)
        m = measure(w, F0, scheme_n=20)
        self.assertEqual(m.tie_rms, 0.0)
        self.assertEqual(m.tie_pp, 0.0)
        self.assertEqual(m.ddj_pp, 0.0)
        self.assertAlmostEqual(m.period, 8e-9)
        np.testing.assert_allclose(np.unique(np.round(m.duty_cycles, 12)), [0.4, 0.6])

    def test_constant_delay_is_absorbed(self):
        m = measure(ideal_clock(F0, 500).shifted(123_456), F0)
        self.assertEqual(m.tie_rms, 0.0)

    def test_random_jitter(self):
        w = inject_jitter(ideal_clock(F0, 100_000), JitterModel(random_sigma=10e-12, seed=2))
        m = measure(w, F0)
        self.assertAlmostEqual(m.tie_rms, 10e-12, delta=0.3e-12)
        self.assertAlmostEqual(m.rj_rms, 10e-12, delta=0.3e-12)

    def test_sinusoidal_peak_to_peak(self):
        amplitude = 50e-12
        # rising edges at k T; a period of 100 cycles puts edges on both crests
        clock = ideal_clock(F0, 2000, phase=0.0)
        model = JitterModel(periodic_amplitude=amplitude, periodic_frequency=F0 / 100)
        m = measure(inject_jitter(clock, model), F0)
        self.assertAlmostEqual(m.tie_pp, 2 * amplitude, delta=1e-15)

    def test_minimal_distortion_16_duties(self):
        scheme = make_minimal_distortion(16)
        w = serialize_slots(encode_values(scheme, prbs_values(scheme, 5000)), F0)
        duties = set(measure(w, F0, scheme_n=16).duty_cycles.tolist())
        self.assertEqual(duties, {7 / 16, 9 / 16})

    def test_periodic_jitter(self):
        model = JitterModel(periodic_amplitude=50e-12, periodic_frequency=1e6)
        m = measure(inject_jitter(ideal_clock(F0, 10_000), model), F0, periodic_frequency=1e6)
        self.assertAlmostEqual(m.pj_amplitude, 50e-12, delta=1e-12)

    def test_too_few_edges(self):
        with self.assertRaises(TooFewEdges):
            measure(EdgeWaveform(0, [10, 20], 30), F0)

    def test_fit_sinusoid(self):
        t = np.linspace(0, 1e-3, 4000)
        self.assertAlmostEqual(fit_sinusoid(t, 3.0 * np.sin(2 * np.pi * 5e3 * t + 0.3) + 1.0, 5e3), 3.0, places=6)


class TestEye(unittest.TestCase):
    def setUp(self):
        scheme = make_duty_modulated(20, 2)
        self.w = serialize_slots(encode_values(scheme, prbs_values(scheme, 2000)), F0)

    def test_opening_of_ten_percent_setting(self):
        hist = eye_histogram(self.w, F0, 64)
        self.assertAlmostEqual(hist.opening, 1.6e-9, delta=1e-15)
        self.assertEqual(hist.loci.size, 3)
        self.assertEqual(int(hist.counts[0].sum()), hist.cycles)
        self.assertEqual(hist.counts.shape, (2, 64))

    def test_bins_lower_limit(self):
        with self.assertRaises(InvalidParameter):
            eye_histogram(self.w, F0, 4)

    def test_bathtub(self):
        hist = eye_histogram(self.w, F0, 64)
        phases, ber = bathtub(hist, 5e-12)
        self.assertEqual(phases.size, 64)
        self.assertEqual(ber.max(), 0.5)
        self.assertLess(ber[32], 1e-12)
        with self.assertRaises(InvalidParameter):
            bathtub(hist, 0.0)


if __name__ == '__main__':
    unittest.main()
