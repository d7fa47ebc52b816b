import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rirkit.evaluate as ev
from rirkit.audio_io import write_wav
from rirkit.dsp import Waveform
from rirkit.errors import ConfigurationError, ManifestError
from rirkit.manifest import ManifestRow
from rirkit.synth import anchor_rir, grid_center_target, speech_like, synth_rir

FS = 32000


# ---------------------------------------------------------------------------
# Relative error
# ---------------------------------------------------------------------------

def test_relative_error_identity():
    for kind in ("t30", "t15", "edt", "c80", "d50", "srd"):
        assert ev.relative_error(4.2, 4.2, kind) == 0.0


def test_relative_error_t30_example():
    assert ev.relative_error(0.55, 0.5, "t30") == pytest.approx(0.1)


def test_relative_error_c80_linear_domain():
    # 13 dB vs 10 dB compared as energies: |10^1.3 - 10| / 10
    expected = abs(10 ** 1.3 - 10.0) / 10.0
    assert ev.relative_error(13.0, 10.0, "c80") == pytest.approx(expected)
    assert expected == pytest.approx(0.995, abs=0.001)


def test_relative_error_exclusions():
    assert ev.relative_error(math.inf, 1.0, "c80") is None
    assert ev.relative_error(1.0, math.nan, "t30") is None
    assert ev.relative_error(1.0, 0.0, "d50") is None


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(1.01, 7.0))
def test_relative_error_scale_aware(feat, ref, scale):
    base = ev.relative_error(feat, ref, "t30")
    scaled = ev.relative_error(scale * feat, scale * ref, "t30")
    assert scaled == pytest.approx(base, rel=1e-9)


# ---------------------------------------------------------------------------
# A-weighting
# ---------------------------------------------------------------------------

def test_a_weight_normalized_at_1khz():
    assert ev.a_weight_db(1000.0) == 0.0


def test_a_weight_63hz_table_value():
    assert ev.a_weight_db(63.0) == pytest.approx(-26.2, abs=0.3)


def test_a_weighted_aggregate_of_constant():
    assert ev.a_weighted_aggregate([0.37] * 8) == pytest.approx(0.37, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=8, max_size=8))
def test_a_weighted_aggregate_between_min_and_max(errors):
    agg = ev.a_weighted_aggregate(errors)
    assert min(errors) - 1e-12 <= agg <= max(errors) + 1e-12


# ---------------------------------------------------------------------------
# SRMR deviation
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def dry_pair():
    return [speech_like(1.2, FS, seed=s) for s in (0, 1)]


@pytest.fixture(scope="module")
def short_ref_rir():
    return synth_rir(grid_center_target(1, 3, sample_rate_hz=FS, seed=21))[0]


def test_srmr_deviation_identity(dry_pair, short_ref_rir):
    assert ev.srmr_deviation(short_ref_rir, short_ref_rir, dry_pair) == 0.0


def test_srmr_deviation_anchor_is_far(dry_pair, short_ref_rir):
    anchor = anchor_rir(FS)
    delta = ev.srmr_deviation(anchor, short_ref_rir, dry_pair)
    assert delta > 0.1


def test_srmr_deviation_scale_free(dry_pair, short_ref_rir):
    anchor = anchor_rir(FS)
    a = ev.srmr_deviation(anchor, short_ref_rir, dry_pair)
    b = ev.srmr_deviation(Waveform(2.0 * anchor.samples, FS), short_ref_rir, dry_pair)
    assert b == pytest.approx(a, abs=1e-6)


def test_srmr_deviation_needs_dry():
    with pytest.raises(ConfigurationError):
        ev.srmr_deviation(anchor_rir(FS), anchor_rir(FS), [])


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

def test_bootstrap_constant_values():
    assert ev.bootstrap_ci([2.5] * 10, seed=0) == (2.5, 2.5, 2.5)


def test_bootstrap_width_matches_normal_approximation():
    values = [0.0] * 500 + [1.0] * 500
    mean, lower, upper = ev.bootstrap_ci(values, seed=0)
    assert mean == 0.5
    assert upper - lower == pytest.approx(2 * 1.96 * 0.5 / math.sqrt(1000), abs=0.015)


def test_bootstrap_deterministic_and_contains_mean():
    values = np.random.default_rng(7).exponential(size=40).tolist()
    a = ev.bootstrap_ci(values, seed=3)
    b = ev.bootstrap_ci(values, seed=3)
    assert a == b
    mean, lower, upper = a
    assert mean == pytest.approx(float(np.mean(values)), abs=1e-15)
    assert lower <= mean <= upper


def test_bootstrap_needs_two_values():
    with pytest.raises(ConfigurationError):
        ev.bootstrap_ci([1.0], seed=0)


# ---------------------------------------------------------------------------
# Full protocol
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ref_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("refs")
    rows = []
    for i, t_cls in enumerate((3, 5, 7)):
        wave, _ = synth_rir(grid_center_target(t_cls, 2 + i, sample_rate_hz=FS,
                                               seed=50 + i))
        path = out / f"rir{i}.wav"
        write_wav(path, wave)
        rows.append(ManifestRow(id=f"rir{i}", wav_path=str(path)))
    return rows


def test_evaluate_set_self_comparison_is_zero(ref_manifest, dry_pair):
    report = ev.evaluate_set(ref_manifest, ref_manifest, dry_pair,
                             method="self", seed=0, n_resamples=200)
    for name, summary in report.metrics.items():
        assert summary.mean == 0.0, name
        assert (summary.lower, summary.upper) == (0.0, 0.0)


def test_evaluate_set_permutation_invariant(ref_manifest, dry_pair):
    a = ev.evaluate_set(ref_manifest, ref_manifest, dry_pair, seed=1, n_resamples=100)
    b = ev.evaluate_set(list(reversed(ref_manifest)), ref_manifest, dry_pair,
                        seed=1, n_resamples=100)
    assert a.to_dict() == b.to_dict()


def test_evaluate_set_unmatched_ids(ref_manifest, dry_pair):
    extra = ref_manifest + [ManifestRow(id="ghost", wav_path="nowhere.wav")]
    with pytest.raises(ManifestError, match="ghost"):
        ev.evaluate_set(extra, ref_manifest, dry_pair)


def test_report_serialization(ref_manifest, dry_pair):
    report = ev.evaluate_set(ref_manifest, ref_manifest, dry_pair,
                             method="self", seed=0, n_resamples=100)
    doc = report.to_dict()
    assert doc["method"] == "self"
    assert set(ev.METRIC_ORDER) <= set(doc["metrics"])
    csv_text = report.to_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0].startswith("method,")
    assert lines[1].startswith("self,")
    # percentage points in the CSV
    assert ",0.000," in lines[1] or lines[1].endswith("0.000")


def test_evaluate_set_per_sample_budget(ref_manifest, dry_pair):
    # budget check: a 50-sample run with four dry signals must fit in 60 s,
    # so one pair with two dry signals gets 0.6 s when parallelized
    import time
    start = time.perf_counter()
    ev.evaluate_set(ref_manifest, ref_manifest, dry_pair, seed=0,
                    n_resamples=100, jobs=2)
    per_pair = (time.perf_counter() - start) / len(ref_manifest)
    assert per_pair < 0.6


def test_feature_errors_band_aggregation():
    from rirkit.dsp import AcousticParams, MeasureSet
    block = MeasureSet(0.5, 0.5, 0.5, 8.0, 75.0)
    ref = AcousticParams(block, tuple(block for _ in range(8)), 2.0)
    worse = MeasureSet(0.6, 0.5, 0.5, 8.0, 75.0)
    gen = AcousticParams(worse, tuple(worse for _ in range(8)), 2.0)
    errs = ev.feature_errors(gen, ref)
    assert errs["t30"] == pytest.approx(0.2, abs=1e-9)   # same error in every band
    assert errs["t30_bb"] == pytest.approx(0.2, abs=1e-9)
    assert errs["srd"] == 0.0

    detail = ev.per_feature_errors(gen, ref)
    t30_bands = [fe for fe in detail if fe.feature == "t30" and fe.band.endswith("hz")]
    assert len(t30_bands) == 8
    assert all(fe.delta == pytest.approx(0.2, abs=1e-9) for fe in t30_bands)
    assert {fe.band for fe in detail if fe.feature == "d50"} == {
        "broadband", "aw", "63hz", "125hz", "250hz", "500hz",
        "1000hz", "2000hz", "4000hz", "8000hz"}
