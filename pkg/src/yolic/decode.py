"""Turn the C-length probability vector into per-cell decisions.

One thresholding pass, no cross-cell post-processing. Each cell block holds
M object probabilities plus a trailing background probability. The
background bit wins: when it clears the threshold the cell is background no
matter what the object probabilities say. When nothing clears the threshold
the cell is reported background with a low-confidence marker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cellgeom import CellConfig
from .labelkit import CellLabelVector

__all__ = [
    "PRED_FORMAT",
    "CellPrediction",
    "decode",
    "to_binary",
    "labels_to_predictions",
    "write_predictions",
    "read_predictions",
]

PRED_FORMAT = "yolic-pred/1"

RISK = "risk"
ROAD = "road"


@dataclass(frozen=True)
class CellPrediction:
    """Decision for one cell; raw probabilities are always retained so other
    decision rules can be layered without re-running the network."""

    object_probs: tuple[float, ...]
    background_prob: float
    decided_classes: tuple[int, ...]
    is_background: bool
    low_confidence: bool = False

    def __post_init__(self):
        if self.is_background != (len(self.decided_classes) == 0):
            raise ValueError("is_background must hold exactly when no class is decided")


def decode(probs: np.ndarray, cfg: CellConfig, theta: float = 0.5) -> list[CellPrediction]:
    """Threshold a probability vector of length N*(M+1) into cell decisions.

    Per cell: background wins when its probability is >= theta; otherwise
    every object class with probability >= theta is decided; if that set is
    empty the cell falls back to background with low_confidence set.
    Elementwise per cell: O(C), no cross-cell interaction.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    n, m = cfg.n_cells, cfg.n_classes
    if probs.shape[0] != n * (m + 1):
        raise ValueError(
            f"prob vector has length {probs.shape[0]}, config needs {n * (m + 1)}"
        )
    blocks = probs.reshape(n, m + 1)
    preds = []
    for i in range(n):
        obj = tuple(float(v) for v in blocks[i, :m])
        bg = float(blocks[i, m])
        if bg >= theta:
            preds.append(CellPrediction(obj, bg, (), True))
            continue
        decided = tuple(k for k in range(m) if obj[k] >= theta)
        if decided:
            preds.append(CellPrediction(obj, bg, decided, False))
        else:
            preds.append(CellPrediction(obj, bg, (), True, low_confidence=True))
    return preds


def to_binary(preds: list[CellPrediction]) -> list[str]:
    """Collapse decisions to the two-class view: RISK when any class is
    decided, ROAD otherwise."""
    return [RISK if p.decided_classes else ROAD for p in preds]


def labels_to_predictions(labels: CellLabelVector) -> list[CellPrediction]:
    """Lift ground-truth bits into the prediction type (bit 1 -> prob 1.0).
    Decoding the result at any theta in (0, 1] reproduces the bits."""
    preds = []
    m = labels.n_classes
    for row in labels.bits:
        obj = tuple(float(b) for b in row[:m])
        bg = float(row[m])
        decided = tuple(k for k in range(m) if row[k])
        preds.append(CellPrediction(obj, bg, decided, not decided))
    return preds


# ---------------------------------------------------------------------------
# prediction dump format (consumed by the UI overlay and the evaluator)

def write_predictions(preds: list[CellPrediction], n_classes: int,
                      theta: float = 0.5) -> bytes:
    """yolic-pred/1: header "yolic-pred/1 N M theta", then one line per cell:
    M+1 probabilities at 6 decimals, " | ", and the decision ("-" background,
    "-?" low-confidence background, else comma-separated class indices)."""
    lines = [f"{PRED_FORMAT} {len(preds)} {n_classes} {theta:g}"]
    for p in preds:
        nums = " ".join(f"{v:.6f}" for v in (*p.object_probs, p.background_prob))
        if p.decided_classes:
            dec = ",".join(str(k) for k in p.decided_classes)
        else:
            dec = "-?" if p.low_confidence else "-"
        lines.append(f"{nums} | {dec}")
    return ("\n".join(lines) + "\n").encode("ascii")


def read_predictions(data: bytes | str) -> tuple[list[CellPrediction], float]:
    """Parse a yolic-pred/1 document; returns (predictions, theta)."""
    if isinstance(data, bytes):
        data = data.decode("ascii")
    lines = [ln for ln in data.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty prediction document")
    header = lines[0].split()
    if len(header) != 4 or header[0] != PRED_FORMAT:
        raise ValueError(f"bad header {lines[0]!r}")
    n, m, theta = int(header[1]), int(header[2]), float(header[3])
    if len(lines) - 1 != n:
        raise ValueError(f"expected {n} cell lines, found {len(lines) - 1}")
    preds = []
    for i, line in enumerate(lines[1:]):
        try:
            nums_part, dec_part = line.split("|")
            vals = [float(t) for t in nums_part.split()]
        except ValueError:
            raise ValueError(f"line {i + 2}: malformed cell line {line!r}") from None
        if len(vals) != m + 1:
            raise ValueError(f"line {i + 2}: expected {m + 1} probabilities, found {len(vals)}")
        dec = dec_part.strip()
        if dec in ("-", "-?"):
            preds.append(
                CellPrediction(tuple(vals[:m]), vals[m], (), True, low_confidence=dec == "-?")
            )
        else:
            decided = tuple(int(t) for t in dec.split(","))
            preds.append(CellPrediction(tuple(vals[:m]), vals[m], decided, False))
    return preds, theta
