"""Objective comparison of generated RIRs against references.

Per-feature relative errors (clarity compared in the linear energy
domain), A-weighted aggregation across frequency bands, modulation-ratio
deviation through convolution with dry signals, and percentile-bootstrap
confidence intervals. Invalid comparisons are excluded pairwise per
metric and counted, never averaged in.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .dsp import AcousticParams, BandSet, MEASURES, Waveform, analyze, srmr_lite
from .errors import ConfigurationError, DegenerateSignalError, ManifestError

log = logging.getLogger(__name__)

#: Report column order: the five A-weighted feature errors, then distance
#: and modulation-ratio deviations.
METRIC_ORDER = ("t30", "t15", "edt", "c80", "d50", "srd", "srmr")


@dataclass(frozen=True)
class FeatureError:
    """One relative error, tagged with its feature and band."""

    feature: str
    band: str          # "broadband", "63hz", ... or "aw" for the aggregate
    delta: float


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    lower: float
    upper: float
    count: int
    excluded: int


@dataclass(frozen=True, eq=False)
class EvalReport:
    method: str
    metrics: dict[str, MetricSummary]
    broadband: dict[str, MetricSummary] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def enc(s: MetricSummary) -> dict:
            return {"mean": s.mean, "lower": s.lower, "upper": s.upper,
                    "count": s.count, "excluded": s.excluded}

        return {"method": self.method,
                "metrics": {k: enc(v) for k, v in self.metrics.items()},
                "broadband": {k: enc(v) for k, v in self.broadband.items()}}

    def to_csv(self) -> str:
        """Wide table, one row per method; deltas in percentage points."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        header = ["method"]
        for m in METRIC_ORDER:
            header += [f"{m}_mean_pct", f"{m}_lower_pct", f"{m}_upper_pct"]
        writer.writerow(header)
        row = [self.method]
        for m in METRIC_ORDER:
            s = self.metrics.get(m)
            if s is None:
                row += ["", "", ""]
            else:
                row += [f"{100 * s.mean:.3f}", f"{100 * s.lower:.3f}",
                        f"{100 * s.upper:.3f}"]
        writer.writerow(row)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Per-feature errors
# ---------------------------------------------------------------------------

def relative_error(feat: float, ref: float, kind: str) -> float | None:
    """|feat - ref| / ref, with clarity mapped to linear energy first.

    Returns None (an excluded-sample signal, not an exception) for
    non-finite inputs or a zero reference.
    """
    if not (math.isfinite(feat) and math.isfinite(ref)):
        return None
    if kind == "c80":
        feat = 10.0 ** (feat / 10.0)
        ref = 10.0 ** (ref / 10.0)
    if ref == 0.0:
        return None
    return abs(feat - ref) / ref


_A_F1_2 = 20.6 ** 2
_A_F2_2 = 107.7 ** 2
_A_F3_2 = 737.9 ** 2
_A_F4_2 = 12194.0 ** 2


def _ra(f_hz: float) -> float:
    f2 = f_hz * f_hz
    return (_A_F4_2 * f2 * f2) / (
        (f2 + _A_F1_2) * math.sqrt((f2 + _A_F2_2) * (f2 + _A_F3_2)) * (f2 + _A_F4_2))


def a_weight_db(f_hz: float) -> float:
    """Standard A-weighting response in dB, normalized to 0 dB at 1 kHz."""
    return 20.0 * math.log10(_ra(f_hz) / _ra(1000.0))


def a_weighted_aggregate(band_errors, bands: BandSet = BandSet()) -> float:
    """Power-domain A-weighted mean of per-band relative errors."""
    errors = np.asarray(band_errors, dtype=np.float64)
    gains = np.asarray([10.0 ** (a_weight_db(c) / 10.0)
                        for c in bands.centers_hz[: errors.size]])
    return float(np.sum(gains * errors) / np.sum(gains))


# ---------------------------------------------------------------------------
# Modulation-ratio deviation
# ---------------------------------------------------------------------------

def srmr_deviation(gen_rir: Waveform, ref_rir: Waveform,
                   dry: list[Waveform]) -> float | None:
    """Mean relative modulation-ratio error over dry signals.

    Each dry signal is convolved with both RIRs; scores come from
    :func:`rirkit.dsp.srmr_lite`. Degenerate scores are excluded with a
    logged count; returns None when nothing survives.
    """
    if not dry:
        raise ConfigurationError("need at least one dry signal")
    deltas = []
    skipped = 0
    for d in dry:
        if d.sample_rate_hz != gen_rir.sample_rate_hz or \
                d.sample_rate_hz != ref_rir.sample_rate_hz:
            raise ConfigurationError("dry and RIR sample rates must match")
        s_gen = srmr_lite(Waveform(fftconvolve(d.samples, gen_rir.samples),
                                   d.sample_rate_hz))
        s_ref = srmr_lite(Waveform(fftconvolve(d.samples, ref_rir.samples),
                                   d.sample_rate_hz))
        if not (math.isfinite(s_gen) and math.isfinite(s_ref)) or s_ref == 0.0:
            skipped += 1
            continue
        deltas.append(abs(s_gen - s_ref) / s_ref)
    if skipped:
        log.warning("srmr_deviation: excluded %d degenerate dry comparisons", skipped)
    return float(np.mean(deltas)) if deltas else None


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

def bootstrap_ci(values, n_resamples: int = 2000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float, float]:
    """Percentile bootstrap of the mean: (mean, lower, upper).

    Deterministic given the seed.

    Raises
    ------
    ConfigurationError
        With fewer than two values.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size < 2:
        raise ConfigurationError("bootstrap needs at least 2 values")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, vals.size, size=(n_resamples, vals.size))
    means = vals[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lower, upper = np.percentile(means, [tail, 100.0 - tail])
    return float(vals.mean()), float(lower), float(upper)


# ---------------------------------------------------------------------------
# Full protocol
# ---------------------------------------------------------------------------

_KIND = {"t30_s": "t30", "t15_s": "t15", "edt_s": "edt",
         "c80_db": "c80", "d50_pct": "d50"}


def per_feature_errors(gen: AcousticParams, ref: AcousticParams,
                       bands: BandSet = BandSet()) -> list[FeatureError]:
    """Every per-band and broadband relative error for one sample pair,
    plus the A-weighted aggregate per feature (band tag "aw"). Invalid
    comparisons are simply absent."""
    out: list[FeatureError] = []
    for measure in MEASURES:
        kind = _KIND[measure]
        delta = relative_error(getattr(gen.broadband, measure),
                               getattr(ref.broadband, measure), kind)
        if delta is not None:
            out.append(FeatureError(kind, "broadband", delta))
        band_deltas = []
        band_centers = []
        for center, g_blk, r_blk in zip(bands.centers_hz, gen.per_band, ref.per_band):
            delta = relative_error(getattr(g_blk, measure), getattr(r_blk, measure), kind)
            if delta is not None:
                band_deltas.append(delta)
                band_centers.append(center)
                out.append(FeatureError(kind, f"{int(round(center))}hz", delta))
        if band_deltas:
            out.append(FeatureError(
                kind, "aw",
                a_weighted_aggregate(band_deltas, BandSet(tuple(band_centers)))))
    delta = relative_error(gen.srd_m, ref.srd_m, "srd")
    if delta is not None:
        out.append(FeatureError("srd", "broadband", delta))
    return out


def feature_errors(gen: AcousticParams, ref: AcousticParams,
                   bands: BandSet = BandSet()) -> dict[str, float | None]:
    """A-weighted and broadband per-feature errors for one sample pair.

    Keys are the metric names (A-weighted aggregates) plus ``*_bb``
    broadband variants; None marks an excluded comparison.
    """
    detail = per_feature_errors(gen, ref, bands)
    out: dict[str, float | None] = {f"{k}_bb": None for k in _KIND.values()}
    out.update({k: None for k in _KIND.values()})
    out["srd"] = None
    for fe in detail:
        if fe.band == "aw":
            out[fe.feature] = fe.delta
        elif fe.band == "broadband":
            out[fe.feature if fe.feature == "srd" else f"{fe.feature}_bb"] = fe.delta
    return out


def evaluate_set(generated: list, reference: list, dry: list[Waveform], *,
                 method: str = "generated", seed: int = 0, n_resamples: int = 2000,
                 bands: BandSet = BandSet(), loader=None, jobs: int = 1) -> EvalReport:
    """Run the objective protocol over matched manifests.

    ``generated`` and ``reference`` are manifest rows (see
    :mod:`rirkit.manifest`); the ids of their valid rows must match
    exactly. ``loader`` maps a row to a Waveform (defaults to reading
    ``row.wav_path``). Parameters are measured from the waveforms unless
    a row already carries them. Row order does not affect the report.

    Raises
    ------
    ManifestError
        On unmatched valid-row ids.
    """
    if loader is None:
        from .manifest import load_row_waveform as loader  # noqa: PLC0415
    gen_by_id = {row.id: row for row in generated if row.valid}
    ref_by_id = {row.id: row for row in reference if row.valid}
    missing = sorted(set(ref_by_id) ^ set(gen_by_id))
    if missing:
        raise ManifestError(f"unmatched sample ids: {', '.join(missing)}")

    collected: dict[str, list[float]] = {m: [] for m in METRIC_ORDER}
    collected_bb = {f"{m}_bb": [] for m in ("t30", "t15", "edt", "c80", "d50")}
    excluded: dict[str, int] = {m: 0 for m in list(collected) + list(collected_bb)}

    def one_sample(sample_id: str) -> dict[str, float | None] | None:
        g_row, r_row = gen_by_id[sample_id], ref_by_id[sample_id]
        g_wave, r_wave = loader(g_row), loader(r_row)
        try:
            g_params = g_row.params or analyze(g_wave, bands)
            r_params = r_row.params or analyze(r_wave, bands)
        except DegenerateSignalError:
            log.warning("excluding %s: degenerate waveform", sample_id)
            return None
        errs = feature_errors(g_params, r_params, bands)
        errs["srmr"] = srmr_deviation(g_wave, r_wave, dry)
        return errs

    ids = sorted(ref_by_id)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_sample = list(pool.map(one_sample, ids))
    else:
        per_sample = [one_sample(i) for i in ids]

    for errs in per_sample:
        if errs is None:
            for m in excluded:
                excluded[m] += 1
            continue
        for key, value in errs.items():
            store = collected if key in collected else collected_bb
            if value is None:
                excluded[key] += 1
            else:
                store[key].append(value)

    dropped = {k: v for k, v in excluded.items() if v}
    if dropped:
        log.info("evaluate_set[%s]: excluded comparisons %s", method, dropped)

    def summarize(values: list[float], key: str) -> MetricSummary:
        if len(values) >= 2:
            mean, lo, hi = bootstrap_ci(values, n_resamples, seed=seed)
        elif values:
            mean = lo = hi = values[0]
        else:
            mean = lo = hi = math.nan
        return MetricSummary(mean, lo, hi, len(values), excluded[key])

    metrics = {m: summarize(collected[m], m) for m in METRIC_ORDER}
    broadband = {k: summarize(v, k) for k, v in collected_bb.items()}
    return EvalReport(method, metrics, broadband)


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2, allow_nan=True)
