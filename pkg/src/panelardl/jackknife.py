"""Half-panel jackknife correction for the small-T bias of the two-way FE estimator."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .debt_capacity import ThresholdParams
from .design import DesignMatrix, ModelSpec, absorb_two_way, design_for_thresholds, design_layout
from .errors import EstimationError, JackknifeError, PreconditionError
from .estimator import FitResult, fit_ols
from .panel_io import PanelDataset


@dataclass
class JackknifeResult:
    corrected: pd.Series
    full: FitResult
    half_a: FitResult
    half_b: FitResult
    se: pd.Series
    dropped_firms: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "corrected": self.corrected.to_dict(),
            "se": self.se.to_dict(),
            "full": self.full.coefficients.to_dict(),
            "half_a": self.half_a.coefficients.to_dict(),
            "half_b": self.half_b.coefficients.to_dict(),
            "nobs": {"full": self.full.nobs, "half_a": self.half_a.nobs, "half_b": self.half_b.nobs},
            "dropped_firms": [str(f) for f in self.dropped_firms],
        }

    def comparison_table(self, digits: int = 4) -> str:
        width = max(len(lab) for lab in self.corrected.index)
        head = f"{'':{width}}  {'FE-TE':>12}  {'corrected':>12}  {'se':>12}"
        lines = [head, "-" * len(head)]
        for lab in self.corrected.index:
            lines.append(
                f"{lab:{width}}  {self.full.coefficients[lab]:12.{digits}f}"
                f"  {self.corrected[lab]:12.{digits}f}  {self.se[lab]:12.{digits}f}"
            )
        return "\n".join(lines)


def split_halves(row_firm: np.ndarray, row_quarter: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of each firm's first and second half of rows in time order.

    A firm with an odd number of rows loses its earliest row first.
    """
    frame = pd.DataFrame({"firm": row_firm, "quarter": row_quarter, "row": np.arange(len(row_firm))})
    frame = frame.sort_values(["firm", "quarter"], kind="stable")
    rank = frame.groupby("firm").cumcount().to_numpy()
    size = frame.groupby("firm")["row"].transform("size").to_numpy()
    skip = size % 2
    half = (size - skip) // 2
    first = (rank >= skip) & (rank < skip + half)
    second = rank >= skip + half
    a = np.zeros(len(row_firm), dtype=bool)
    b = np.zeros(len(row_firm), dtype=bool)
    a[frame["row"].to_numpy()[first]] = True
    b[frame["row"].to_numpy()[second]] = True
    return a, b


def _isolated_firms(dm: DesignMatrix, mask: np.ndarray) -> set:
    """Firms that are the only firm present in some quarter of the masked sample."""
    frame = pd.DataFrame({"firm": dm.row_firm[mask], "quarter": dm.row_quarter[mask]})
    per_quarter = frame.groupby("quarter")["firm"].transform("nunique")
    return set(frame.loc[per_quarter.to_numpy() < 2, "firm"])


def _fit_part(dm: DesignMatrix, vcov_kind: str, method: str, name: str) -> FitResult:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        absorbed = absorb_two_way(dm, method=method)
    if absorbed.dropped:
        raise JackknifeError(f"{name}: columns absorbed by the fixed effects: {list(absorbed.dropped)}")
    try:
        return fit_ols(absorbed, vcov_kind=vcov_kind)
    except EstimationError as exc:
        raise JackknifeError(f"{name}: {exc}") from exc


def half_panel_jackknife(
    ds: PanelDataset,
    q: Mapping[str, pd.Series],
    spec: ModelSpec,
    thresholds: ThresholdParams,
    macro: Mapping[str, pd.Series] | None = None,
    vcov_kind: str = "cluster_by_firm",
    min_obs: int = 8,
    absorb_method: str = "alternating",
    threads: int = 1,
) -> JackknifeResult:
    """``2 * full - (half_a + half_b) / 2`` at fixed thresholds.

    Lags are formed on the full panel; the usable regression rows of each firm
    are then split in time, and each half has its own firm and quarter effects
    removed.  Standard errors are those of the full-sample fit.
    """
    layout = design_layout(ds, q, spec, macro)
    dm = design_for_thresholds(ds, q, spec, thresholds, macro, layout)
    short = sorted(f for f, n in layout.n_rows_by_firm.items() if 0 < n < min_obs)
    if short:
        raise PreconditionError(
            f"{len(short)} firms have fewer than {min_obs} usable observations (e.g. {short[:5]}); filter them first"
        )
    a, b = split_halves(dm.row_firm, dm.row_quarter)

    dropped: set = set()
    while True:
        bad = (_isolated_firms(dm, a) | _isolated_firms(dm, b)) - dropped
        if not bad:
            break
        dropped |= bad
        keep = ~np.isin(dm.row_firm, list(dropped))
        a &= keep
        b &= keep
    if dropped:
        warnings.warn(
            f"dropping {len(dropped)} firms that are alone in some quarter of a half-sample", stacklevel=2
        )

    parts = [(dm, "full"), (dm.subset(a), "half_a"), (dm.subset(b), "half_b")]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, 3)) as pool:
            full, fa, fb = pool.map(lambda job: _fit_part(job[0], vcov_kind, absorb_method, job[1]), parts)
    else:
        full, fa, fb = (_fit_part(d, vcov_kind, absorb_method, name) for d, name in parts)

    labels = list(full.coefficients.index)
    for half, name in ((fa, "half_a"), (fb, "half_b")):
        if list(half.coefficients.index) != labels:
            raise JackknifeError(f"{name} coefficients do not align with the full-sample labels")
    corrected = 2.0 * full.coefficients - (fa.coefficients + fb.coefficients) / 2.0
    return JackknifeResult(corrected, full, fa, fb, full.std_errors.copy(), sorted(dropped, key=str))
