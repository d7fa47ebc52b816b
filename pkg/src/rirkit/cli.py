"""Command-line pipeline: ingest, analyze, quantize, synth, codec, sample, eval.

Every command accepts --seed and --config (JSON; the RIRKIT_CONFIG
environment variable supplies the default path), prints one
machine-readable JSON summary line on success, and exits 0 on success,
1 on operational failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import codec as cd
from . import params as pm
from . import sampling as sp
from . import synth as sy
from .audio_io import read_wav, resample, truncate_pad, write_wav
from .dsp import AcousticParams, Waveform, analyze
from .errors import ConfigurationError, DegenerateSignalError, RirkitError
from .evaluate import evaluate_set, report_to_json
from .manifest import ManifestRow, read_manifest, write_manifest

log = logging.getLogger(__name__)

SESSION_DURATION_S = 2.0


def _summary(**fields) -> None:
    print(json.dumps(fields, sort_keys=True))


def _row_seed(base: int, sample_id: str) -> int:
    return (base ^ zlib.crc32(sample_id.encode())) & 0x7FFFFFFF


def _load_config(path: str | None) -> dict:
    path = path or os.environ.get("RIRKIT_CONFIG")
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _opt(args, config: dict, key: str, default):
    v = getattr(args, key.replace("-", "_"), None)
    if v is not None:
        return v
    return config.get(key, default)


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def _ingest_one(path: Path, rate: int, manifest_dir: Path) -> ManifestRow:
    try:
        rel = os.path.relpath(path, manifest_dir)
        wav_ref = rel if not rel.startswith("..") else str(path.resolve())
    except ValueError:
        wav_ref = str(path.resolve())
    row = ManifestRow(id=path.stem, wav_path=wav_ref, base_dir=manifest_dir)
    try:
        raw = resample(read_wav(path), rate)
        w = truncate_pad(raw, SESSION_DURATION_S)
    except (RirkitError, ValueError, OSError) as exc:
        row.valid = False
        row.exclusion_reason = f"read-error: {exc}"
        return row
    try:
        p = analyze(w)
    except DegenerateSignalError:
        row.valid = False
        row.exclusion_reason = "degenerate-signal"
        return row
    row.params = p

    # Noise floor measured before padding, so appended zeros cannot hide it.
    peak2 = float(np.max(np.abs(raw.samples))) ** 2
    tail = raw.samples[-max(1, len(raw) // 10):]
    floor = float(np.mean(tail * tail))
    if floor > 0 and 10.0 * math.log10(floor / peak2) > -20.0:
        row.valid = False
        row.exclusion_reason = "high-noise-floor"
    elif "t30_s" in p.flags:
        row.valid = False
        row.exclusion_reason = "insufficient-decay:t30"
    elif not math.isfinite(p.broadband.c80_db):
        row.valid = False
        row.exclusion_reason = "degenerate:c80"
    elif np.all(np.isfinite(p.as_vector())):
        row.quantized = pm.quantize_params(p)
    return row


def cmd_ingest(args, config: dict) -> None:
    src = Path(args.directory)
    files = sorted(src.glob("*.wav"))
    if not files:
        raise ConfigurationError(f"no WAV files in {src}")
    rate = int(_opt(args, config, "rate", 44100))
    jobs = int(_opt(args, config, "jobs", 1))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda f: _ingest_one(f, rate, out.parent), files))
    else:
        rows = [_ingest_one(f, rate, out.parent) for f in files]
    write_manifest(rows, out)
    _summary(command="ingest", files=len(rows),
             valid=sum(r.valid for r in rows), out=str(out))


# ---------------------------------------------------------------------------
# analyze / quantize
# ---------------------------------------------------------------------------

def cmd_analyze(args, config: dict) -> None:
    rate = _opt(args, config, "rate", None)
    w = read_wav(args.wav)
    if rate is not None:
        w = resample(w, int(rate))
    p = analyze(w)
    doc = p.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=2))
    _summary(command="analyze", wav=str(args.wav), params=doc)


def cmd_quantize(args, config: dict) -> None:
    p = AcousticParams.from_dict(json.loads(Path(args.params).read_text()))
    q = pm.quantize_params(p)
    doc = q.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=2))
    _summary(command="quantize", quantized=doc)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _target_params(row: ManifestRow) -> AcousticParams | None:
    if row.quantized is not None:
        return pm.dequantize_params(row.quantized)
    return row.params


def cmd_synth(args, config: dict) -> None:
    rate = int(_opt(args, config, "rate", 44100))
    duration = float(_opt(args, config, "duration", SESSION_DURATION_S))
    seed = int(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs: list[tuple[str, AcousticParams]] = []
    if args.manifest:
        for row in read_manifest(args.manifest):
            p = _target_params(row)
            if row.valid and p is not None:
                jobs.append((row.id, p))
            else:
                log.warning("skipping %s: no usable target", row.id)
    elif args.params:
        p = AcousticParams.from_dict(json.loads(Path(args.params).read_text()))
        jobs.append((Path(args.params).stem, p))
    else:
        raise ConfigurationError("synth needs --manifest or --params")

    rows = []
    for sample_id, p in jobs:
        target = sy.SynthTarget(p, duration_s=duration, sample_rate_hz=rate,
                                seed=_row_seed(seed, sample_id))
        wave, report = sy.synth_rir(target)
        wav_name = f"{sample_id}.wav"
        write_wav(out_dir / wav_name, wave)
        (out_dir / f"{sample_id}.report.json").write_text(json.dumps({
            "achieved": report.achieved.to_dict(),
            "iterations": report.iterations,
            "errors": report.errors,
            "flags": list(report.flags),
        }, sort_keys=True, indent=2))
        rows.append(ManifestRow(id=sample_id, wav_path=wav_name,
                                params=report.achieved, base_dir=out_dir))
    write_manifest(rows, out_dir / "manifest.jsonl")
    _summary(command="synth", count=len(rows), out_dir=str(out_dir))


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------

def _corpus_from_manifest(path: str, rate: int) -> list[Waveform]:
    corpus = []
    for row in read_manifest(path):
        if row.valid:
            corpus.append(truncate_pad(resample(read_wav(row.resolve_wav()), rate),
                                       SESSION_DURATION_S))
    return corpus


def cmd_codec(args, config: dict) -> None:
    if args.action == "train":
        rate = int(_opt(args, config, "rate", 44100))
        corpus = _corpus_from_manifest(args.manifest, rate)
        cb = cd.train_rvq(corpus,
                          num_stages=int(_opt(args, config, "stages", 4)),
                          codebook_size=int(_opt(args, config, "size", 256)),
                          frame_len=int(_opt(args, config, "frame", 512)),
                          seed=int(args.seed))
        cd.save_codebooks(cb, args.codebook)
        Path(str(args.codebook) + ".json").write_text(json.dumps({
            "trained_on": cb.trained_on, "num_stages": cb.num_stages,
            "codebook_size": cb.codebook_size, "frame_len": cb.frame_len,
            "sample_rate_hz": cb.sample_rate_hz}, sort_keys=True, indent=2))
        _summary(command="codec-train", codebook=str(args.codebook),
                 stages=cb.num_stages, size=cb.codebook_size,
                 fingerprint=cb.trained_on)
    elif args.action == "encode":
        cb = cd.load_codebooks(args.codebook)
        w = read_wav(args.wav)
        if w.sample_rate_hz != cb.sample_rate_hz:
            w = resample(w, cb.sample_rate_hz)
        codes = cd.encode(w, cb)
        cd.save_codegram_json(codes, args.out, sample_rate_hz=cb.sample_rate_hz,
                              sample_count=len(w))
        _summary(command="codec-encode", frames=int(codes.shape[1]), out=str(args.out))
    elif args.action == "decode":
        cb = cd.load_codebooks(args.codebook)
        codes, _, count = cd.load_codegram_json(args.codegram)
        wave = cd.decode(codes, cb)
        if count is not None:
            wave = Waveform(wave.samples[:count], wave.sample_rate_hz)
        write_wav(args.out, wave)
        _summary(command="codec-decode", samples=len(wave), out=str(args.out))
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigurationError(f"unknown codec action {args.action}")


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def _condition_rows(config: dict) -> list[ManifestRow]:
    cond = config.get("condition")
    if not cond:
        return []
    rows = read_manifest(cond["manifest"])
    wanted = cond.get("ids")
    if wanted:
        rows = [r for r in rows if r.id in set(wanted)]
    return [r for r in rows if r.valid and r.quantized is not None]


def _ngram_from_spec(spec: dict, cb: cd.RvqCodebooks) -> sp.NgramModel:
    corpus = []
    for row in read_manifest(spec["manifest"]):
        if not row.valid:
            continue
        w = read_wav(row.resolve_wav())
        if w.sample_rate_hz != cb.sample_rate_hz:
            w = resample(w, cb.sample_rate_hz)
        corpus.append(cd.flatten(cd.encode(truncate_pad(w, SESSION_DURATION_S), cb)))
    return sp.ngram_model(corpus, int(spec.get("order", 2)), cb.codebook_size)


def cmd_sample(args, config: dict) -> None:
    mode = args.mode or config.get("mode")
    if mode not in ("ar-cfg", "ar-cg", "maskgit", "flow"):
        raise ConfigurationError(f"unknown sampling mode {mode!r}")
    cb = cd.load_codebooks(config["codebook"])
    seed = int(args.seed if args.seed is not None else config.get("seed", 0))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    duration = float(config.get("duration_s", SESSION_DURATION_S))
    n_frames = -(-int(round(duration * cb.sample_rate_hz)) // cb.frame_len)

    weights = sp.default_classifier_weights()
    weights.update(config.get("classifier_weights", {}))
    gcfg = sp.GuidanceConfig(
        lam=float(config.get("lambda", 1.0)),
        classifier_weights=weights,
        cfg_weight=float(config.get("cfg_weight", 0.0)),
        top_k=int(config.get("top_k", 64)),
        temperature=float(config.get("temperature",
                                     0.5 if mode == "ar-cg" else 1.0)),
    )
    model_spec = config.get("model", {})
    rows = []

    def emit(sample_id: str, codes: cd.Codegram | None, wave: Waveform):
        wav_name = f"{sample_id}.wav"
        write_wav(out_dir / wav_name, wave)
        if codes is not None:
            cd.save_codegram_json(codes, out_dir / f"{sample_id}.codegram.json",
                                  sample_rate_hz=cb.sample_rate_hz)
        rows.append(ManifestRow(id=sample_id, wav_path=wav_name, base_dir=out_dir))

    if mode in ("ar-cfg", "ar-cg"):
        if model_spec.get("type", "ngram") != "ngram":
            raise ConfigurationError("ar modes expect an ngram model spec")
        model = _ngram_from_spec(model_spec, cb)
        conditions = _condition_rows(config)
        if not conditions:
            raise ConfigurationError("ar modes need a condition manifest")
        classifier = None
        if mode == "ar-cg":
            classifier = sp.OnsetSrdClassifier(pm.default_grids()["SRD"])
        for row in conditions:
            rng = np.random.default_rng(_row_seed(seed, row.id))
            cvec = pm.to_conditioning_vector(row.quantized,
                                             config.get("condition", {}).get("mode", "raw"))
            length = cb.num_stages * n_frames
            if mode == "ar-cfg":
                tokens = sp.ar_generate(model, cvec.values, gcfg, length, rng)
            else:
                tokens = sp.ar_generate(
                    model, None, gcfg, length, rng, mode="cg",
                    classifier=classifier, codebooks=cb,
                    class_targets={"srd_m": row.quantized.slot_index("srd_m")})
            codes = cd.unflatten(tokens, cb.num_stages)
            emit(row.id, codes, cd.decode(codes, cb))
    elif mode == "maskgit":
        if model_spec.get("type") != "oracle-codegram":
            raise ConfigurationError("maskgit reference run expects an oracle-codegram model")
        target, _, _ = cd.load_codegram_json(model_spec["codegram"])
        model = sp.OracleMaskedModel(target, cb.codebook_size)
        schedule = sp.MaskSchedule(int(config.get("steps", 20)))
        codes = sp.maskgit_generate(model, None, target.shape[0], target.shape[1],
                                    schedule, cfg_weight=gcfg.cfg_weight,
                                    temperature=gcfg.temperature, rng=seed)
        emit(config.get("id", "maskgit0"), codes, cd.decode(codes, cb))
    else:  # flow
        if model_spec.get("type") != "pull-to-latent":
            raise ConfigurationError("flow reference run expects a pull-to-latent model")
        target_codes, _, _ = cd.load_codegram_json(model_spec["codegram"])
        latent_target = cd.reconstruct_latent(target_codes, cb)
        model = sp.PullToTargetVelocity(latent_target)
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal(latent_target.shape)
        latent = sp.euler_sample(model, x0, None, int(config.get("steps", 25)),
                                 cfg_weight=gcfg.cfg_weight)
        emit(config.get("id", "flow0"), None,
             Waveform(latent.reshape(-1), cb.sample_rate_hz))

    write_manifest(rows, out_dir / "manifest.jsonl")
    _summary(command="sample", mode=mode, count=len(rows), out_dir=str(out_dir))


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args, config: dict) -> None:
    generated = read_manifest(args.generated)
    reference = read_manifest(args.reference)
    dry_files = sorted(Path(args.dry_dir).glob("*.wav"))
    if not dry_files:
        raise ConfigurationError(f"no dry WAV files in {args.dry_dir}")
    ref_valid = [r for r in reference if r.valid]
    if not ref_valid:
        raise ConfigurationError("reference manifest has no valid rows")
    rate = read_wav(ref_valid[0].resolve_wav()).sample_rate_hz
    dry = [resample(read_wav(f), rate) for f in dry_files]
    report = evaluate_set(generated, reference, dry,
                          method=str(_opt(args, config, "method", "generated")),
                          seed=int(args.seed),
                          n_resamples=int(_opt(args, config, "resamples", 2000)),
                          jobs=int(_opt(args, config, "jobs", 1)))
    if args.out:
        Path(args.out).write_text(report_to_json(report))
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    _summary(command="eval", method=report.method,
             metrics={k: v.mean for k, v in report.metrics.items()})


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rirkit",
                                     description="RIR analysis/synthesis/sampling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON config file")

    p = sub.add_parser("ingest", help="analyze and quantize a directory of WAVs")
    p.add_argument("directory")
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="acoustic parameters of one WAV")
    p.add_argument("wav")
    p.add_argument("--rate", type=int, default=None)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("quantize", help="class indices for a params JSON")
    p.add_argument("params")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("synth", help="synthesize RIRs for manifest targets")
    p.add_argument("--manifest", default=None)
    p.add_argument("--params", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rate", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("codec", help="train or run the RVQ codec")
    p.add_argument("action", choices=["train", "encode", "decode"])
    p.add_argument("--manifest", default=None)
    p.add_argument("--codebook", required=True)
    p.add_argument("--wav", default=None)
    p.add_argument("--codegram", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--rate", type=int, default=None)
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--frame", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_codec)

    p = sub.add_parser("sample", help="conditioned generation")
    p.add_argument("--mode", choices=["ar-cfg", "ar-cg", "maskgit", "flow"],
                   default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="objective evaluation of generated vs reference")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--dry-dir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--method", default=None)
    p.add_argument("--resamples", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        args.func(args, config)
    except (RirkitError, OSError, ValueError, KeyError) as exc:
        print(f"rirkit {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    entry()
