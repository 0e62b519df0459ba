"""Trapezoid membership functions and the three-bucket cohesion classifier."""

from __future__ import annotations

from dataclasses import dataclass

from .model import Bucket

Trapezoid = tuple[float, float, float, float]


def trapezoid(x: float, a: float, b: float, c: float, d: float) -> float:
    if x < a or x > d:
        return 0.0
    if b <= x <= c:
        return 1.0
    if x < b:
        return (x - a) / (b - a)
    return (d - x) / (d - c)


@dataclass(frozen=True)
class Trapezoids:
    low: Trapezoid = (0.0, 0.0, 0.3, 0.45)
    mid: Trapezoid = (0.3, 0.45, 0.6, 0.75)
    high: Trapezoid = (0.6, 0.75, 1.0, 1.0)

    def __post_init__(self) -> None:
        for name in ("low", "mid", "high"):
            a, b, c, d = getattr(self, name)
            if not a <= b <= c <= d:
                raise ValueError(f"{name} trapezoid must satisfy a <= b <= c <= d")
        for k in range(1001):
            x = k / 1000
            if max(self.degrees(x).values()) <= 0.0:
                raise ValueError(f"trapezoids leave cohesion {x} uncovered")

    def degrees(self, x: float) -> dict[Bucket, float]:
        return {
            Bucket.LOW: trapezoid(x, *self.low),
            Bucket.MID: trapezoid(x, *self.mid),
            Bucket.HIGH: trapezoid(x, *self.high),
        }


def classify(cohesion: float, traps: Trapezoids = Trapezoids()) -> tuple[Bucket, dict[Bucket, float]]:
    """Bucket with the highest membership; ties go to the more conservative bucket."""
    if not 0.0 <= cohesion <= 1.0:
        raise ValueError("cohesion must lie in [0, 1]")
    degrees = traps.degrees(cohesion)
    best = Bucket.LOW
    for bucket in (Bucket.MID, Bucket.HIGH):
        if degrees[bucket] > degrees[best]:
            best = bucket
    return best, degrees
