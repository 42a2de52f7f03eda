"""Depth evaluation: standard error metrics over range buckets.

Metrics follow the usual monocular/stereo depth conventions: RMSE and MAE
in meters, absolute relative difference (ARD), and threshold accuracies
delta_i = percentage of pixels whose symmetric depth ratio max(pred/gt,
gt/pred) stays below 1.25**i.

Pixels are assigned to a bucket by their ground-truth depth, half-open
[lo, hi).  Within a bucket, pixels the predictor left invalid count as
failures for the threshold metrics but are excluded from RMSE/MAE/ARD
(abstention is not rewarded); the exclusion count is reported alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DepthMap
from .errors import EmptyBucket, InvalidConfig, ShapeMismatch

DEFAULT_BUCKETS: tuple[tuple[float, float], ...] = (
    (0.0, 160.0),
    (0.0, 220.0),
    (100.0, 220.0),
)


@dataclass(frozen=True)
class BucketMetrics:
    """Error statistics for one depth range.

    `evaluated` counts pixels entering RMSE/MAE/ARD; `missing` counts
    ground-truth pixels in the bucket where the prediction was invalid
    (scored as threshold failures).  When the bucket itself holds no
    ground truth, `empty` is set and every statistic is NaN/zero.
    """

    lo: float
    hi: float
    rmse: float
    mae: float
    ard: float
    delta1: float
    delta2: float
    delta3: float
    evaluated: int
    missing: int
    empty: bool = False

    def as_dict(self) -> dict:
        return {
            "bucket": [self.lo, self.hi],
            "rmse": self.rmse,
            "mae": self.mae,
            "ard": self.ard,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "evaluated": self.evaluated,
            "missing": self.missing,
            "empty": self.empty,
        }


@dataclass(frozen=True)
class EvalReport:
    """Bucketed metrics for one prediction/ground-truth pair."""

    buckets: tuple[BucketMetrics, ...]

    def bucket(self, lo: float, hi: float) -> BucketMetrics:
        for b in self.buckets:
            if b.lo == lo and b.hi == hi:
                return b
        raise KeyError(f"no bucket [{lo}, {hi})")

    def as_dict(self) -> dict:
        return {"buckets": [b.as_dict() for b in self.buckets]}


def _check_bucket(bucket: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(bucket[0]), float(bucket[1])
    if math.isnan(lo) or math.isnan(hi) or lo < 0.0 or hi <= lo:
        raise InvalidConfig(f"bad depth bucket [{lo}, {hi})")
    return lo, hi


def compute_metrics(pred: DepthMap, gt: DepthMap,
                    bucket: tuple[float, float] = (0.0, math.inf)) -> BucketMetrics:
    """Score a predicted depth map against ground truth over one bucket.

    Raises EmptyBucket when no ground-truth pixel falls in the range;
    bucketed_report catches that case and flags it instead.
    """
    lo, hi = _check_bucket(bucket)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    in_bucket = gt.mask & (gt.values >= lo) & (gt.values < hi)
    total = int(in_bucket.sum())
    if total == 0:
        raise EmptyBucket(f"no ground truth in [{lo}, {hi})")

    scored = in_bucket & pred.mask
    missing = total - int(scored.sum())
    p = pred.values[scored]
    g = gt.values[scored]
    if p.size:
        err = p - g
        rmse = float(np.sqrt(np.mean(err**2)))
        mae = float(np.mean(np.abs(err)))
        ard = float(np.mean(np.abs(err) / g))
        ratio = np.maximum(p / g, g / p)
        deltas = [100.0 * float((ratio < 1.25**i).sum()) / total
                  for i in (1, 2, 3)]
    else:
        rmse = mae = ard = float("nan")
        deltas = [0.0, 0.0, 0.0]
    return BucketMetrics(lo, hi, rmse, mae, ard, *deltas,
                         evaluated=int(p.size), missing=missing)


def bucketed_report(pred: DepthMap, gt: DepthMap,
                    buckets: tuple[tuple[float, float], ...] = DEFAULT_BUCKETS,
                    ) -> EvalReport:
    """compute_metrics per bucket; empty buckets are flagged, not fatal."""
    if not buckets:
        raise InvalidConfig("need at least one bucket")
    rows = []
    for bucket in buckets:
        lo, hi = _check_bucket(bucket)
        try:
            rows.append(compute_metrics(pred, gt, (lo, hi)))
        except EmptyBucket:
            nan = float("nan")
            rows.append(BucketMetrics(lo, hi, nan, nan, nan, 0.0, 0.0, 0.0,
                                      evaluated=0, missing=0, empty=True))
    return EvalReport(tuple(rows))
