import math

import numpy as np
import pytest

from ffprecode.airlink import (
    Constellation,
    LinkConfig,
    awgn,
    complex_normal,
    measure_ber,
    modulate,
    noise_var_for_snr,
    rayleigh_channel,
    received_estimates,
    substream,
)
from ffprecode.errors import InvalidInputError
from ffprecode.fabric import WorkloadShape


@pytest.mark.parametrize("order", [4, 16, 64, 256])
def test_constellation_energy_and_bijection(order):
    const = Constellation(order)
    assert abs(np.mean(np.abs(const.points) ** 2) - 1.0) <= 1e-12
    labels = {tuple(row) for row in const.bit_map}
    assert len(labels) == order
    assert len(set(np.round(const.points, 12))) == order


def test_constellation_energy_scales():
    assert np.mean(np.abs(Constellation(16, 2.5).points) ** 2) == pytest.approx(2.5, abs=1e-12)


@pytest.mark.parametrize("order", [16, 64])
def test_gray_adjacency(order):
    const = Constellation(order)
    step = np.min(np.abs(np.diff(np.unique(np.round(const.points.real, 12)))))
    for i, p in enumerate(const.points):
        for j, q in enumerate(const.points):
            d = q - p
            adjacent = (abs(abs(d.real) - step) < 1e-9 and abs(d.imag) < 1e-9) or (
                abs(abs(d.imag) - step) < 1e-9 and abs(d.real) < 1e-9
            )
            if adjacent:
                assert np.sum(const.bit_map[i] != const.bit_map[j]) == 1


def test_constellation_rejects_odd_order():
    for bad in (2, 8, 32, 100):
        with pytest.raises(InvalidInputError):
            Constellation(bad)


def test_exact_point_gives_exact_label():
    const = Constellation(64)
    for idx in (0, 17, 42, 63):
        np.testing.assert_array_equal(const.demodulate(const.points[idx:idx + 1]), const.bit_map[idx])


def test_tie_goes_to_lowest_index():
    const = Constellation(4)
    # the origin is equidistant from all four points
    assert const.detect(np.array([0j]))[0] == 0
    mid = (const.points[0] + const.points[1]) / 2
    assert const.detect(np.array([mid]))[0] == min(0, 1)


def test_modulate_demodulate_round_trip(rng):
    const = Constellation(64)
    shape = WorkloadShape(3, 7)
    bits = rng.integers(0, 2, size=3 * 7 * 4 * 6, dtype=np.uint8)
    frame = modulate(bits, const, shape, users=4)
    assert frame.symbols.shape == (3, 7, 4)
    np.testing.assert_array_equal(const.demodulate(frame.symbols).ravel(), bits)


def test_modulate_rejects_partial_symbol():
    with pytest.raises(InvalidInputError):
        Constellation(16).modulate(np.zeros(5, dtype=np.uint8))


def test_rayleigh_statistics():
    H = rayleigh_channel(1000, 1000, np.random.default_rng(7))
    n = H.size
    assert 0.995 <= np.mean(np.abs(H) ** 2) <= 1.005
    # each of real/imag has variance 1/2, so the mean's std is sqrt(1/(2n))
    bound = 4 * math.sqrt(0.5 / n)
    assert abs(H.real.mean()) <= bound and abs(H.imag.mean()) <= bound
    assert np.var(H.real) == pytest.approx(0.5, rel=0.01)


def test_rayleigh_determinism():
    a = rayleigh_channel(4, 8, substream(3, 1, 2, 0))
    b = rayleigh_channel(4, 8, substream(3, 1, 2, 0))
    c = rayleigh_channel(4, 8, substream(3, 1, 2, 1))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_awgn_zero_noise(rng):
    y0 = complex_normal(5, rng)
    np.testing.assert_array_equal(awgn(y0, 0.0, rng), y0)
    with pytest.raises(InvalidInputError):
        awgn(y0, -1.0, rng)


def test_awgn_statistics():
    N0 = 0.3
    n = awgn(np.zeros(1_000_000), N0, np.random.default_rng(11))
    assert abs(np.mean(np.abs(n) ** 2) / N0 - 1) <= 0.01
    assert abs(np.corrcoef(n.real, n.imag)[0, 1]) <= 0.01


def test_noise_var_for_snr():
    assert noise_var_for_snr(0.0) == 1.0
    assert noise_var_for_snr(10.0, rho_sq=2.0) == pytest.approx(0.2)


def test_ber_zero_in_noiseless_limit():
    link = LinkConfig(users=4, cluster_sizes=(64,), seed=1)
    (report,) = measure_ber("central-wf", link, [150.0], trials=20)
    assert report.bit_errors == 0 and report.bits_total == 20 * 7 * 4 * 6


def test_ber_half_in_pure_noise():
    link = LinkConfig(users=16, cluster_sizes=(32, 32), seed=2)
    reports = measure_ber(["central-wf", "fd-wf"], link, [-60.0], trials=200)
    for r in reports:
        assert r.bits_total >= 100_000
        assert abs(r.ber - 0.5) <= 0.02


def test_pd_bit_errors_equal_central():
    link = LinkConfig(users=16, cluster_sizes=(16,) * 4, seed=5)
    reports = measure_ber(["central-wf", "pd-wf"], link, [4.0, 8.0, 12.0], trials=40)
    central = [r.bit_errors for r in reports if r.precoder == "central-wf"]
    pd = [r.bit_errors for r in reports if r.precoder == "pd-wf"]
    assert central == pd and sum(central) > 0


def test_ber_report_fields():
    link = LinkConfig(users=4, cluster_sizes=(8, 8), seed=0)
    reports = measure_ber(["mrt", "zf"], link, [0.0, 10.0], trials=5)
    assert [(r.precoder, r.snr_db) for r in reports] == [
        ("mrt", 0.0), ("mrt", 10.0), ("zf", 0.0), ("zf", 10.0)
    ]
    for r in reports:
        assert r.ber == r.bit_errors / r.bits_total
        assert 0 <= r.ber <= 0.5 + 0.05


@pytest.mark.slow
def test_ber_monotone_in_snr():
    link = LinkConfig(users=16, cluster_sizes=(32, 32), seed=3)
    reports = measure_ber(["central-wf", "fd-wf"], link, np.arange(0, 21, 2), trials=1000)
    for p in ("central-wf", "fd-wf"):
        ber = [r.ber for r in reports if r.precoder == p]
        violations = sum(b > a for a, b in zip(ber, ber[1:]))
        assert violations <= 1


def test_gray_errors_mostly_single_bit():
    link = LinkConfig(users=16, cluster_sizes=(256,), seed=4)
    const = link.constellation
    N0 = noise_var_for_snr(12.0)
    cfg = link.precoder_config(N0)
    bit_errors = symbol_errors = multi = bits = 0
    for t in range(300):
        H = rayleigh_channel(16, 256, substream(link.seed, t, 0, 0))[None]
        sent = substream(link.seed, t, 0, 1).integers(0, const.order, size=(1, 7, 16))
        y0, scale = received_estimates("central-wf", H, link, cfg, const.points[sent])
        y = awgn(y0, N0, substream(link.seed, t, 0, 2))
        got = const.detect(scale[:, None, None] * y)
        diff = np.sum(const.bit_map[got] != const.bit_map[sent], axis=-1)
        bit_errors += int(diff.sum())
        symbol_errors += int(np.count_nonzero(diff))
        multi += int(np.count_nonzero(diff > 1))
        bits += diff.size * const.bits_per_symbol
    assert bit_errors / bits <= 1e-3
    assert symbol_errors > 0
    assert multi / symbol_errors <= 0.2


def test_parallel_matches_serial():
    link = LinkConfig(users=8, cluster_sizes=(16, 16), seed=9)
    args = (["central-wf", "fd-wf", "mrt"], link, [0.0, 6.0, 12.0])
    serial = measure_ber(*args, trials=12, workers=1, chunk_size=4)
    parallel = measure_ber(*args, trials=12, workers=2, chunk_size=4)
    assert [(r.bit_errors, r.bits_total) for r in serial] == [
        (r.bit_errors, r.bits_total) for r in parallel
    ]


def test_invalid_combinations():
    link = LinkConfig(users=16, cluster_sizes=(4, 4))
    for p in ("central-wf", "zf", "pd-wf"):
        with pytest.raises(InvalidInputError):
            measure_ber(p, link, [0.0], trials=1)
    with pytest.raises(InvalidInputError):
        measure_ber("bogus", link, [0.0], trials=1)
    with pytest.raises(InvalidInputError):
        measure_ber([], link, [0.0], trials=1)
    with pytest.raises(InvalidInputError):
        measure_ber("mrt", link, [0.0], trials=0)
    # FD-WF and MRT have no B >= U requirement
    measure_ber(["fd-wf", "mrt"], link, [0.0], trials=1)
