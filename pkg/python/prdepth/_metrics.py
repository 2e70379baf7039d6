from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Literal

import numpy as np
import numpy.typing as npt

from prdepth._errors import InvalidArgumentError

InverseUnit = Literal["m", "km"]

_MIN_PRED_DEPTH = 1e-6
_DELTA_BASE = 1.25


@dataclass(frozen=True, slots=True)
class MetricsReport:
    """Depth-completion errors over a masked comparison.

    Depth errors are in meters, inverse-depth errors in 1/m, and the
    threshold accuracies in percent.
    """

    rmse: float
    mae: float
    rel: float
    irmse: float
    imae: float
    delta1: float
    delta2: float
    delta3: float
    n: int

    CSV_HEADER: ClassVar[tuple[str, ...]] = (
        "rmse",
        "mae",
        "rel",
        "irmse",
        "imae",
        "delta1",
        "delta2",
        "delta3",
        "n",
    )

    def csv_row(self, *, inverse_unit: InverseUnit = "m") -> tuple[str, ...]:
        scale = 1000.0 if inverse_unit == "km" else 1.0
        values = (
            self.rmse,
            self.mae,
            self.rel,
            self.irmse * scale,
            self.imae * scale,
            self.delta1,
            self.delta2,
            self.delta3,
        )
        return (*(repr(float(v)) for v in values), str(self.n))

    def format_table(self, *, inverse_unit: InverseUnit = "m") -> str:
        scale = 1000.0 if inverse_unit == "km" else 1.0
        rows = [
            ("RMSE [m]", f"{self.rmse:.4f}"),
            ("MAE [m]", f"{self.mae:.4f}"),
            ("REL", f"{self.rel:.4f}"),
            (f"iRMSE [1/{inverse_unit}]", f"{self.irmse * scale:.4f}"),
            (f"iMAE [1/{inverse_unit}]", f"{self.imae * scale:.4f}"),
            ("delta1 [%]", f"{self.delta1:.2f}"),
            ("delta2 [%]", f"{self.delta2:.2f}"),
            ("delta3 [%]", f"{self.delta3:.2f}"),
            ("pixels", str(self.n)),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate(
    pred: npt.ArrayLike, gt: npt.ArrayLike, mask: npt.ArrayLike | None = None
) -> MetricsReport:
    """Compare a predicted depth map against ground truth.

    Without a mask, every pixel with positive ground truth is evaluated.
    The threshold accuracies count ``max(pred/gt, gt/pred) < 1.25**i``
    strictly.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        msg = f"prediction {p.shape} and ground truth {g.shape} disagree"
        raise InvalidArgumentError(msg)
    if mask is None:
        selected = np.isfinite(g) & (g > 0)
    else:
        selected = np.asarray(mask, dtype=bool)
        if selected.shape != g.shape:
            msg = f"mask shape {selected.shape} != map shape {g.shape}"
            raise InvalidArgumentError(msg)
    if not selected.any():
        msg = "evaluation mask selects no pixels"
        raise InvalidArgumentError(msg)

    pv, gv = p[selected], g[selected]
    if np.any(~(gv > 0)):
        msg = "ground truth must be positive on evaluated pixels"
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(pv)):
        msg = "prediction must be finite on evaluated pixels"
        raise InvalidArgumentError(msg)

    err = pv - gv
    inv_err = 1.0 / np.maximum(pv, _MIN_PRED_DEPTH) - 1.0 / gv

    def delta(power: int) -> float:
        # max(p / g, g / p) < t, cross-multiplied; p <= 0 always misses
        t = _DELTA_BASE**power
        hit = (pv > 0) & (pv < t * gv) & (gv < t * pv)
        return 100.0 * float(np.mean(hit))

    return MetricsReport(
        rmse=float(np.sqrt(np.mean(err * err))),
        mae=float(np.mean(np.abs(err))),
        rel=float(np.mean(np.abs(err) / gv)),
        irmse=float(np.sqrt(np.mean(inv_err * inv_err))),
        imae=float(np.mean(np.abs(inv_err))),
        delta1=delta(1),
        delta2=delta(2),
        delta3=delta(3),
        n=int(pv.size),
    )
