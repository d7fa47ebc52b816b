"""Parameter discretization grids, class encoding, and conditioning vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import AcousticParams, BandSet, slot_names
from .errors import InvalidValueError

#: Nudge applied before flooring so exact bin boundaries land in the upper
#: class even when the division rounds a hair low.
_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class ClassGrid:
    """A quantization grid for one measure kind."""

    kind: str                 # T30 | T15 | EDT | C80 | D50 | SRD
    lo: float
    hi: float
    num_classes: int
    spacing: str = "linear"   # linear | log

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidValueError(f"{self.kind}: grid needs lo < hi")
        if self.num_classes < 2:
            raise InvalidValueError(f"{self.kind}: grid needs at least 2 classes")
        want = "log" if self.kind == "SRD" else "linear"
        if self.spacing != want:
            raise InvalidValueError(f"{self.kind}: spacing must be {want!r}")

    def _axis(self, v: float) -> float:
        return math.log10(v) if self.spacing == "log" else v

    @property
    def _width(self) -> float:
        return (self._axis(self.hi) - self._axis(self.lo)) / self.num_classes


def default_grids() -> dict[str, ClassGrid]:
    """The toolkit's canonical grids, one per measure kind."""
    return {
        "T30": ClassGrid("T30", 0.1, 1.5, 15),
        "T15": ClassGrid("T15", 0.1, 1.5, 15),
        "EDT": ClassGrid("EDT", 0.1, 1.5, 15),
        "C80": ClassGrid("C80", 0.0, 20.0, 11),
        "D50": ClassGrid("D50", 40.0, 100.0, 13),
        "SRD": ClassGrid("SRD", 0.3, 30.0, 10, spacing="log"),
    }


_MEASURE_KIND = {"t30_s": "T30", "t15_s": "T15", "edt_s": "EDT",
                 "c80_db": "C80", "d50_pct": "D50", "srd_m": "SRD"}


def kind_for_slot(slot: str) -> str:
    """Grid kind for a slot name like ``"edt_s:250hz"``."""
    return _MEASURE_KIND[slot.split(":")[0]]


def quantize(value: float, grid: ClassGrid) -> int:
    """Map a physical value to its class index.

    Values are clamped into [lo, hi]; the upper edge maps to the last
    class. Log grids apply the same rule on log10 of the value.

    Raises
    ------
    InvalidValueError
        For NaN input.
    """
    if math.isnan(value):
        raise InvalidValueError(f"{grid.kind}: cannot quantize NaN")
    v = min(max(value, grid.lo), grid.hi)
    idx = int(math.floor((grid._axis(v) - grid._axis(grid.lo)) / grid._width
                         + _BOUNDARY_EPS))
    return min(idx, grid.num_classes - 1)


def dequantize(index: int, grid: ClassGrid) -> float:
    """Bin-center value (geometric center for log grids) of a class index.

    Raises
    ------
    InvalidValueError
        For an out-of-range index.
    """
    if not 0 <= index < grid.num_classes:
        raise InvalidValueError(f"{grid.kind}: class {index} outside [0, {grid.num_classes - 1}]")
    center = grid._axis(grid.lo) + (index + 0.5) * grid._width
    return 10.0 ** center if grid.spacing == "log" else center


@dataclass(frozen=True, eq=False)
class QuantizedParams:
    """Class indices for all 46 slots, with the grids that produced them."""

    indices: np.ndarray
    grids: dict[str, ClassGrid]
    bands: BandSet = BandSet()

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        names = slot_names(self.bands)
        if idx.shape != (len(names),):
            raise InvalidValueError(f"expected {len(names)} class indices, got {idx.shape}")
        for name, i in zip(names, idx):
            grid = self.grids[kind_for_slot(name)]
            if not 0 <= i < grid.num_classes:
                raise InvalidValueError(f"slot {name}: class {i} outside grid")
        object.__setattr__(self, "indices", idx)

    def slot_index(self, slot: str) -> int:
        return int(self.indices[slot_names(self.bands).index(slot)])

    def to_dict(self) -> dict:
        return {name: int(i) for name, i in zip(slot_names(self.bands), self.indices)}

    @staticmethod
    def from_dict(d: dict, grids: dict[str, ClassGrid] | None = None,
                  bands: BandSet = BandSet()) -> "QuantizedParams":
        grids = grids or default_grids()
        idx = [int(d[name]) for name in slot_names(bands)]
        return QuantizedParams(np.asarray(idx), grids, bands)


def quantize_params(p: AcousticParams, grids: dict[str, ClassGrid] | None = None,
                    bands: BandSet = BandSet()) -> QuantizedParams:
    """Quantize every slot of an analysis result."""
    grids = grids or default_grids()
    values = p.as_vector()
    idx = [quantize(float(v), grids[kind_for_slot(name)])
           for name, v in zip(slot_names(bands), values)]
    return QuantizedParams(np.asarray(idx), grids, bands)


def dequantize_params(q: QuantizedParams) -> AcousticParams:
    """Bin-center physical values for a set of class indices."""
    names = slot_names(q.bands)
    values = [dequantize(int(i), q.grids[kind_for_slot(name)])
              for name, i in zip(names, q.indices)]
    return AcousticParams.from_vector(np.asarray(values))


@dataclass(frozen=True, eq=False)
class ConditioningVector:
    """Model conditioning input, either raw class indices or one-hot blocks."""

    mode: str            # raw | one_hot
    values: np.ndarray

    def to_dict(self) -> dict:
        return {"mode": self.mode, "values": [float(v) for v in self.values]}

    @staticmethod
    def from_dict(d: dict) -> "ConditioningVector":
        return ConditioningVector(d["mode"], np.asarray(d["values"], dtype=np.float64))


def one_hot_length(grids: dict[str, ClassGrid] | None = None,
                   bands: BandSet = BandSet()) -> int:
    grids = grids or default_grids()
    return sum(grids[kind_for_slot(name)].num_classes for name in slot_names(bands))


def to_conditioning_vector(q: QuantizedParams, mode: str = "raw") -> ConditioningVector:
    """Flatten quantized parameters for model input.

    ``raw`` emits the 46 class indices as reals; ``one_hot`` emits
    concatenated one-hot blocks in slot order (631 entries with the
    default grids).
    """
    if mode == "raw":
        return ConditioningVector("raw", q.indices.astype(np.float64))
    if mode == "one_hot":
        blocks = []
        for name, i in zip(slot_names(q.bands), q.indices):
            block = np.zeros(q.grids[kind_for_slot(name)].num_classes)
            block[int(i)] = 1.0
            blocks.append(block)
        return ConditioningVector("one_hot", np.concatenate(blocks))
    raise InvalidValueError(f"unknown conditioning mode {mode!r}")
