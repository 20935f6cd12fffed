"""Randomized-response stage tests: exact distributions, sampling fidelity, estimator."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posxsim.rappor import (
    EmptyReportsError,
    LdpParamError,
    LdpParams,
    PrrCache,
    decode_unary,
    estimate_frequency,
    estimate_standard_errors,
    init_state,
    irr,
    irr_sample,
    ldp_dc,
    marginal_bit_probability,
    pack_bits,
    prr,
    prr_bit_probabilities,
    prr_conditional,
    prr_sample,
    read_report_file,
    report_counts,
    unary_encode,
    unpack_bits,
)


def fresh_rng(label=0):
    return np.random.default_rng(1000 + label)


# -- unary encoding ------------------------------------------------------------


def test_unary_encode_examples():
    assert unary_encode(2, 2).tolist() == [0, 0, 1, 0]
    assert unary_encode(0, 1).tolist() == [1, 0]


def test_unary_encode_round_trip_exhaustive_k3():
    for reading in range(8):
        assert decode_unary(unary_encode(reading, 3)) == reading


def test_unary_encode_domain_errors():
    with pytest.raises(ValueError):
        unary_encode(4, 2)
    with pytest.raises(LdpParamError):
        unary_encode(0, 0)
    with pytest.raises(LdpParamError):
        unary_encode(0, 13)


def test_param_bounds():
    with pytest.raises(LdpParamError):
        LdpParams(f=1.0, p=0.5, q=0.5, k=3)
    with pytest.raises(LdpParamError):
        LdpParams(f=0.5, p=1.5, q=0.5, k=3)
    with pytest.raises(LdpParamError):
        LdpParams(f=0.5, p=0.5, q=0.5, k=13)
    # p == q is constructible; only the estimator refuses it
    LdpParams(f=0.5, p=0.5, q=0.5, k=3)


def test_params_pack_round_trip():
    params = LdpParams(f=0.25, p=0.75, q=0.125, k=7)
    assert LdpParams.unpack(params.pack()) == params


# -- bit packing -----------------------------------------------------------------


def test_pack_bits_is_little_endian_bit0_first():
    assert pack_bits(np.array([1, 0, 0, 0, 0, 0, 0, 0], dtype=np.uint8)) == b"\x01"
    assert pack_bits(np.array([0, 1, 0, 0, 0, 0, 0, 0], dtype=np.uint8)) == b"\x02"
    assert pack_bits(np.array([1, 0, 0, 0], dtype=np.uint8)) == b"\x01"


@given(st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=64))
def test_pack_unpack_round_trip(bits):
    array = np.array(bits, dtype=np.uint8)
    assert unpack_bits(pack_bits(array), len(bits)).tolist() == bits


# -- permanent stage ----------------------------------------------------------------


def test_prr_exact_distribution_helper():
    for f in (0.25, 0.5, 0.75):
        force_one, force_zero, keep = prr_bit_probabilities(f)
        assert force_one == force_zero == f / 2
        assert math.isclose(force_one + force_zero + keep, 1.0)
        given_one, given_zero = prr_conditional(f)
        assert math.isclose(given_one, 1 - f / 2)
        assert math.isclose(given_zero, f / 2)
        # longitudinal privacy ratio, evaluated on the exact distribution
        assert math.isclose(given_one / given_zero, (1 - f / 2) / (f / 2))


def test_prr_identity_when_f_zero():
    params = LdpParams(f=0.0, p=0.75, q=0.25, k=2)
    bits = unary_encode(1, 2)
    assert prr(bits, params, PrrCache(2), fresh_rng()).tolist() == bits.tolist()


def test_prr_memoization_returns_cached_value():
    params = LdpParams(f=0.5, p=0.75, q=0.25, k=2)
    cache = PrrCache(2)
    rng = fresh_rng(1)
    bits = unary_encode(3, 2)
    first = prr(bits, params, cache, rng)
    for _ in range(99):
        assert (prr(bits, params, cache, rng) == first).all()
    assert len(cache) == 1


def test_prr_sampling_matches_exact_rates_at_4_sigma():
    # oracle: Monte Carlo against the per-bit distribution, binomial sigma
    trials = 100_000
    bits = np.tile(unary_encode(1, 2), (trials, 1))
    for index, f in enumerate((0.25, 0.5, 0.75)):
        out = prr_sample(bits, f, fresh_rng(10 + index))
        given_one, given_zero = prr_conditional(f)
        rate_one = out[:, 1].mean()
        sigma_one = math.sqrt(given_one * (1 - given_one) / trials)
        assert abs(rate_one - given_one) < 4 * sigma_one
        for zero_bit in (0, 2, 3):
            rate_zero = out[:, zero_bit].mean()
            sigma_zero = math.sqrt(given_zero * (1 - given_zero) / trials)
            assert abs(rate_zero - given_zero) < 4 * sigma_zero


# -- instantaneous stage ---------------------------------------------------------------


def test_irr_identity_when_degenerate():
    params = LdpParams(f=0.5, p=1.0, q=0.0, k=2)
    bits = unary_encode(2, 2)
    assert irr(bits, params, fresh_rng()).tolist() == bits.tolist()


def test_irr_equal_probabilities_destroy_signal():
    trials = 100_000
    bits = np.tile(unary_encode(1, 2), (trials, 1))
    out = irr_sample(bits, 0.5, 0.5, fresh_rng(20))
    sigma = math.sqrt(0.25 / trials)
    for column in range(4):
        assert abs(out[:, column].mean() - 0.5) < 4 * sigma


def test_irr_rates_at_4_sigma():
    trials = 100_000
    bits = np.tile(unary_encode(1, 2), (trials, 1))
    out = irr_sample(bits, 0.75, 0.25, fresh_rng(21))
    sigma = math.sqrt(0.75 * 0.25 / trials)
    assert abs(out[:, 1].mean() - 0.75) < 4 * sigma
    for zero_bit in (0, 2, 3):
        assert abs(out[:, zero_bit].mean() - 0.25) < 4 * sigma


def test_irr_never_caches():
    params = LdpParams(f=0.5, p=0.5, q=0.5, k=3)
    bits = unary_encode(1, 3)
    rng = fresh_rng(22)
    draws = {tuple(irr(bits, params, rng).tolist()) for _ in range(64)}
    assert len(draws) > 1


# -- full pipeline ------------------------------------------------------------------


def test_pipeline_degenerate_params_pass_reading_through():
    params = LdpParams(f=0.0, p=1.0, q=0.0, k=2)
    out = ldp_dc(lambda: 3, params, PrrCache(2), fresh_rng(30), fresh_rng(31))
    assert out.tolist() == [0, 0, 0, 1]


def test_cache_serialization_round_trip():
    params = LdpParams(f=0.5, p=0.75, q=0.25, k=3)
    cache = PrrCache(3)
    prr_rng, irr_rng = fresh_rng(40), fresh_rng(41)
    readings = iter([0, 5, 2, 5, 0, 7])
    for _ in range(6):
        ldp_dc(lambda: next(readings), params, cache, prr_rng, irr_rng)
    assert len(cache) == 4  # distinct readings only
    restored = PrrCache.deserialize(cache.serialize(), 3)
    assert restored.entries == cache.entries
    assert restored.serialize() == cache.serialize()


def test_cache_serialization_is_sorted_and_canonical():
    cache_a, cache_b = PrrCache(3), PrrCache(3)
    one, two = unary_encode(1, 3), unary_encode(2, 3)
    mapped = unary_encode(4, 3)
    cache_a.insert(one, mapped), cache_a.insert(two, mapped)
    cache_b.insert(two, mapped), cache_b.insert(one, mapped)
    assert cache_a.serialize() == cache_b.serialize()


def test_init_state_is_empty_cache():
    assert init_state() == b""
    assert len(PrrCache.deserialize(init_state(), 3)) == 0


def test_deserialize_rejects_ragged_bytes():
    with pytest.raises(ValueError):
        PrrCache.deserialize(b"\x01", 3)  # entry size is 2 bytes at k=3


# -- estimator -----------------------------------------------------------------------


def test_estimator_reduces_to_count_fraction_when_noiseless():
    params = LdpParams(f=0.0, p=1.0, q=0.0, k=3)
    reports = [unary_encode(5, 3)] * 10
    estimates = estimate_frequency(reports, params)
    assert estimates[5] == pytest.approx(1.0)
    assert np.allclose(np.delete(estimates, 5), 0.0)


def test_estimator_single_all_zero_report():
    params = LdpParams(f=0.5, p=0.75, q=0.25, k=2)
    estimates = estimate_frequency([np.zeros(4, dtype=np.uint8)], params)
    expected = -(params.q + 0.5 * params.f * params.p - 0.5 * params.f * params.q) / (
        (1 - params.f) * (params.p - params.q)
    )
    assert np.allclose(estimates, expected)


def test_estimator_preconditions():
    params = LdpParams(f=0.5, p=0.75, q=0.25, k=2)
    with pytest.raises(EmptyReportsError):
        estimate_frequency([], params)
    equal = LdpParams(f=0.5, p=0.5, q=0.5, k=2)
    with pytest.raises(LdpParamError):
        estimate_frequency([np.zeros(4, dtype=np.uint8)], equal)


def simulate_reports(n, true_freqs, params, rng):
    """Vectorized device fleet: one report per device, fresh caches everywhere."""
    values = rng.choice(params.domain_size, size=n, p=true_freqs)
    encoded = np.zeros((n, params.domain_size), dtype=np.uint8)
    encoded[np.arange(n), values] = 1
    permanent = prr_sample(encoded, params.f, rng)
    return irr_sample(permanent, params.p, params.q, rng)


def test_estimator_hits_truth_within_three_standard_errors():
    # oracle: Monte Carlo simulation + binomial error propagation
    params = LdpParams(f=0.5, p=0.75, q=0.25, k=3)
    true_freqs = np.array([0.30, 0.20, 0.10] + [0.40 / 5] * 5)
    n = 50_000
    reports = simulate_reports(n, true_freqs, params, fresh_rng(50))
    estimates = estimate_frequency(list(reports), params)
    errors = estimate_standard_errors(true_freqs, params, n)
    assert np.all(np.abs(estimates - true_freqs) <= 3 * errors)


def test_estimator_error_shrinks_with_fleet_size():
    params = LdpParams(f=0.5, p=0.75, q=0.25, k=3)
    true_freqs = np.array([0.30, 0.20, 0.10] + [0.40 / 5] * 5)
    worst = {}
    for n in (1_000, 50_000):
        reports = simulate_reports(n, true_freqs, params, fresh_rng(51))
        estimates = estimate_frequency(list(reports), params)
        worst[n] = np.max(np.abs(estimates - true_freqs))
    assert worst[50_000] < worst[1_000]
    errors = estimate_standard_errors(true_freqs, params, 50_000)
    reports = simulate_reports(50_000, true_freqs, params, fresh_rng(52))
    estimates = estimate_frequency(list(reports), params)
    assert np.all(np.abs(estimates - true_freqs) <= 3 * errors)


def test_marginal_probability_is_consistent_with_stages():
    params = LdpParams(f=0.5, p=0.75, q=0.25, k=2)
    given_one, given_zero = marginal_bit_probability(params)
    prr_one, prr_zero = prr_conditional(params.f)
    assert math.isclose(given_one, params.p * prr_one + params.q * (1 - prr_one))
    assert math.isclose(given_zero, params.p * prr_zero + params.q * (1 - prr_zero))


# -- report files ----------------------------------------------------------------------


def test_report_file_round_trip():
    reports = [unary_encode(v, 3) for v in (1, 4, 4, 7)]
    lines = [pack_bits(r).hex() + "\n" for r in reports]
    parsed = read_report_file(lines, 3)
    assert all((a == b).all() for a, b in zip(parsed, reports))
    assert report_counts(parsed).tolist() == report_counts(reports).tolist()


def test_report_file_names_bad_line():
    lines = ["01\n", "zz\n"]
    with pytest.raises(ValueError, match="line 2"):
        read_report_file(lines, 3)
