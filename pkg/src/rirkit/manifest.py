"""JSONL sample manifests shared by the pipeline commands."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .audio_io import read_wav
from .dsp import AcousticParams, Waveform
from .errors import ManifestError
from .params import QuantizedParams


@dataclass(eq=False)
class ManifestRow:
    id: str
    wav_path: str
    params: AcousticParams | None = None
    quantized: QuantizedParams | None = None
    valid: bool = True
    exclusion_reason: str | None = None
    base_dir: Path = field(default=Path("."), repr=False)

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "wav_path": self.wav_path, "valid": self.valid}
        if self.params is not None:
            d["params"] = self.params.to_dict()
        if self.quantized is not None:
            d["quantized"] = self.quantized.to_dict()
        if self.exclusion_reason is not None:
            d["exclusion_reason"] = self.exclusion_reason
        return d

    @staticmethod
    def from_dict(d: dict, base_dir: Path = Path(".")) -> "ManifestRow":
        return ManifestRow(
            id=d["id"],
            wav_path=d["wav_path"],
            params=AcousticParams.from_dict(d["params"]) if "params" in d else None,
            quantized=QuantizedParams.from_dict(d["quantized"]) if "quantized" in d else None,
            valid=bool(d.get("valid", True)),
            exclusion_reason=d.get("exclusion_reason"),
            base_dir=base_dir,
        )

    def resolve_wav(self) -> Path:
        p = Path(self.wav_path)
        return p if p.is_absolute() else self.base_dir / p


def load_row_waveform(row: ManifestRow) -> Waveform:
    return read_wav(row.resolve_wav())


def write_manifest(rows: list[ManifestRow], path: str | Path) -> None:
    """One JSON object per line, keys sorted: reruns are byte-identical."""
    ids = [r.id for r in rows]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate ids in manifest")
    text = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in rows)
    Path(path).write_text(text)


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(ManifestRow.from_dict(json.loads(line), base_dir=path.parent))
    ids = [r.id for r in rows]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate ids")
    return rows
