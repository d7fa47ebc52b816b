#!/usr/bin/env python3
"""Build a demo dataset: synthetic reference RIRs plus dry test signals.

Writes WAVs under --out-dir (rirs/ and dry/), ready for `rirkit ingest`.
"""

import argparse
from pathlib import Path

from rirkit.audio_io import write_wav
from rirkit.synth import grid_center_target, speech_like, synth_rir


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="demo_data")
    ap.add_argument("--count", type=int, default=12)
    ap.add_argument("--rate", type=int, default=32000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    rir_dir = out / "rirs"
    dry_dir = out / "dry"
    rir_dir.mkdir(parents=True, exist_ok=True)
    dry_dir.mkdir(parents=True, exist_ok=True)

    for i in range(args.count):
        target = grid_center_target(2 + (i % 12), i % 10,
                                    sample_rate_hz=args.rate,
                                    seed=args.seed + 10 * i)
        wave, report = synth_rir(target)
        write_wav(rir_dir / f"room{i:02d}.wav", wave)
        print(f"room{i:02d}: T30 {report.achieved.broadband.t30_s:.2f} s, "
              f"D50 {report.achieved.broadband.d50_pct:.0f}%, "
              f"{report.iterations} iterations")

    for s in range(4):
        write_wav(dry_dir / f"speech{s}.wav",
                  speech_like(2.0, args.rate, seed=args.seed + s))
    print(f"wrote {args.count} RIRs and 4 dry signals under {out}")


if __name__ == "__main__":
    main()
