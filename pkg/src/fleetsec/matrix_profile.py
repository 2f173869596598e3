"""Z-normalized sliding-window distance profiles for anomaly detection.

For a series of length n and window length m, the profile holds, for each
of the n - m + 1 subsequences, the minimum z-normalized Euclidean distance
to any other subsequence outside a trivial-match exclusion zone, plus the
index of that nearest neighbor. Recurring behavior yields low distances;
a window with no similar counterpart anywhere (a discord) yields a high
one, which is what flags an intrusion in otherwise periodic telemetry.

Two interchangeable implementations are provided: an all-pairs
`compute_brute_force` that evaluates every window pair directly, and
`compute_fast`, which reuses sliding dot products between consecutive
windows (one O(n) pass per row instead of O(n*m)). They satisfy the same
contract and agree elementwise to float precision; tests hold them to
1e-9.

Degenerate (near-constant) windows cannot be z-normalized, so the
distance rule is fixed here: two constant windows are identical (distance
0), a constant against a non-constant window is maximally distant
(sqrt(2m)). Flat telemetry is therefore self-similar, while flat-to-active
transitions stand out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FleetsecError

DEFAULT_EPSILON_STD = 1e-12

# Window pairs whose correlation is within this of exactly 1 count as exact
# matches and get distance 0. Without the snap, the dot-product recurrence
# leaves float residue on exactly recurring windows, which would turn the
# zero threshold of a perfectly periodic baseline into a tiny positive one.
# Residues stay below ~1e-12 even when a large burst sits between the
# recurrences, while genuinely different integer-quantized windows sit at
# 1e-5 or more, so this splits the two regimes with orders of margin.
# Applied identically by every route so they still agree elementwise.
EXACT_MATCH_EPS = 1e-10


class LengthMismatchError(FleetsecError):
    """Subsequences of different lengths cannot be compared."""


class InsufficientLengthError(FleetsecError):
    """Series too short to give every window an admissible neighbor."""


class ConfigMismatchError(FleetsecError):
    """Incremental update called with a different config than the profile."""


def default_exclusion(window_m: int) -> int:
    """Standard trivial-match radius: half the window, at least 1."""
    return max(1, window_m // 2)


@dataclass(frozen=True)
class ProfileConfig:
    """Window length, exclusion radius and constant-window threshold.

    `exclusion` defaults to half the window length; matches with
    |i - j| <= exclusion are considered trivial self-matches and skipped.
    """

    window_m: int
    exclusion: int | None = None
    epsilon_std: float = DEFAULT_EPSILON_STD

    def __post_init__(self):
        if self.window_m < 2:
            raise ValueError(f"window_m must be >= 2, got {self.window_m}")
        if self.exclusion is None:
            object.__setattr__(self, "exclusion", default_exclusion(self.window_m))
        if self.exclusion < 1:
            raise ValueError(f"exclusion must be >= 1, got {self.exclusion}")
        if self.epsilon_std <= 0:
            raise ValueError("epsilon_std must be positive")


@dataclass(frozen=True)
class MatrixProfile:
    """Per-window minimum distance and nearest-neighbor index."""

    distances: np.ndarray
    neighbor_index: np.ndarray
    config: ProfileConfig

    def __len__(self) -> int:
        return len(self.distances)


def znorm_distance(a, b, epsilon_std: float = DEFAULT_EPSILON_STD) -> float:
    """Euclidean distance between z-normalized copies of a and b.

    Both inputs are shifted to zero mean and scaled by their population
    standard deviation before comparison, so offset and positive scale are
    ignored. If both are (near-)constant the distance is 0; if exactly one
    is, it is sqrt(2m), the maximum possible value.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatchError(f"lengths differ: {a.shape} vs {b.shape}")
    m = a.size
    if m < 2:
        raise ValueError(f"subsequence length must be >= 2, got {m}")

    sa = float(np.std(a))
    sb = float(np.std(b))
    a_const = sa < epsilon_std
    b_const = sb < epsilon_std
    if a_const and b_const:
        return 0.0
    if a_const or b_const:
        return math.sqrt(2.0 * m)
    za = (a - a.mean()) / sa
    zb = (b - b.mean()) / sb
    d = float(np.linalg.norm(za - zb))
    if d * d <= 2.0 * m * EXACT_MATCH_EPS:
        return 0.0
    return d


def _window_stats(values: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std of every length-m window.

    Computed per window over a sliding view rather than by differencing
    cumulative sums: the cumsum shortcut cancels catastrophically once the
    running totals have passed through a large burst, and those stats
    errors land directly on the correlation of every later window pair.
    """
    windows = np.lib.stride_tricks.sliding_window_view(values, m)
    return windows.mean(axis=1), windows.std(axis=1)


def _validate_length(n: int, config: ProfileConfig) -> int:
    if n < config.window_m + config.exclusion + 1:
        raise InsufficientLengthError(
            f"need at least {config.window_m + config.exclusion + 1} points "
            f"for window {config.window_m} and exclusion {config.exclusion}, got {n}"
        )
    return n - config.window_m + 1


def compute_brute_force(values, config: ProfileConfig) -> MatrixProfile:
    """All-pairs profile: for each window, scan every admissible other window.

    Serves as the independent reference implementation; `compute_fast`
    must reproduce it elementwise.
    """
    values = np.asarray(values, dtype=np.float64)
    w = _validate_length(values.size, config)
    m = config.window_m
    excl = config.exclusion

    windows = np.lib.stride_tricks.sliding_window_view(values, m)
    mu = windows.mean(axis=1)
    sigma = windows.std(axis=1)
    const = sigma < config.epsilon_std
    safe_sigma = np.where(const, 1.0, sigma)
    z = (windows - mu[:, None]) / safe_sigma[:, None]
    z[const] = 0.0

    sqrt2m = math.sqrt(2.0 * m)
    distances = np.empty(w)
    neighbors = np.empty(w, dtype=np.int64)
    snap = 2.0 * m * EXACT_MATCH_EPS
    for i in range(w):
        d = np.sqrt(np.sum((z - z[i]) ** 2, axis=1))
        if const[i]:
            d = np.where(const, 0.0, sqrt2m)
        else:
            d[const] = sqrt2m
        d[d * d <= snap] = 0.0
        d[max(0, i - excl) : i + excl + 1] = np.inf
        j = int(np.argmin(d))
        distances[i] = d[j]
        neighbors[i] = j
    return MatrixProfile(distances, neighbors, config)


# Rows at which the sliding dot product is recomputed from scratch to stop
# float error from the recurrence accumulating over long series.
_REANCHOR_EVERY = 64


def _sliding_dot(values: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Dot product of `query` against every window of `values`."""
    return np.convolve(values, query[::-1], mode="valid")


def _pair_distances(
    qt: np.ndarray,
    i: int,
    mu: np.ndarray,
    sigma: np.ndarray,
    const: np.ndarray,
    m: int,
    sqrt2m: float,
) -> np.ndarray:
    """Distances from window i to all windows, given their dot products."""
    if const[i]:
        return np.where(const, 0.0, sqrt2m)
    safe = np.where(const, 1.0, sigma)
    r = (qt - m * mu[i] * mu) / (m * sigma[i] * safe)
    np.clip(r, -1.0, 1.0, out=r)
    d = np.sqrt(2.0 * m * (1.0 - r))
    d[const] = sqrt2m
    d[d * d <= 2.0 * m * EXACT_MATCH_EPS] = 0.0
    return d


def compute_fast(values, config: ProfileConfig) -> MatrixProfile:
    """Profile via cached dot-product recurrences, O(n^2) total.

    Same contract as compute_brute_force: the dot product of window i
    against window j is derived from that of window i-1 against j-1, and
    the z-normalized distance follows from the Pearson correlation
    identity d = sqrt(2m(1 - r)).
    """
    values = np.asarray(values, dtype=np.float64)
    w = _validate_length(values.size, config)
    m = config.window_m
    excl = config.exclusion
    sqrt2m = math.sqrt(2.0 * m)

    _, sigma_raw = _window_stats(values, m)
    const = sigma_raw < config.epsilon_std
    # Per-window z-normalization ignores global offset and scale, so the
    # recurrence runs on a standardized copy; x and a*x + b then share the
    # same numerical footing instead of drifting apart through the dot
    # products. Constant windows were already classified in raw units above.
    spread = float(values.std())
    if spread > 0.0:
        values = (values - float(values.mean())) / spread
    mu, sigma = _window_stats(values, m)

    distances = np.empty(w)
    neighbors = np.empty(w, dtype=np.int64)
    qt = _sliding_dot(values, values[:m])
    qt_first = qt.copy()  # column 0 equals row 0 by symmetry
    for i in range(w):
        if i > 0:
            if i % _REANCHOR_EVERY == 0:
                qt = _sliding_dot(values, values[i : i + m])
            else:
                qt[1:] = (
                    qt[:-1]
                    - values[: w - 1] * values[i - 1]
                    + values[m : m + w - 1] * values[i + m - 1]
                )
                qt[0] = qt_first[i]
        d = _pair_distances(qt, i, mu, sigma, const, m, sqrt2m)
        d[max(0, i - excl) : i + excl + 1] = np.inf
        j = int(np.argmin(d))
        distances[i] = d[j]
        neighbors[i] = j
    return MatrixProfile(distances, neighbors, config)


def append_and_update(
    profile: MatrixProfile, values, new_value: float, config: ProfileConfig
) -> MatrixProfile:
    """Profile of values + [new_value], reusing the existing profile.

    Old distances can only decrease (the new window is one more neighbor
    candidate); one entry is appended for the new window. The result
    equals recomputing from scratch.
    """
    if config != profile.config:
        raise ConfigMismatchError(
            f"profile was computed with {profile.config}, got {config}"
        )
    values = np.asarray(values, dtype=np.float64)
    extended = np.append(values, float(new_value))
    m = config.window_m
    excl = config.exclusion
    w_old = len(profile)
    j_new = extended.size - m  # index of the appended window
    sqrt2m = math.sqrt(2.0 * m)

    _, sigma_raw = _window_stats(extended, m)
    const = sigma_raw < config.epsilon_std
    # Same standardized anchoring as compute_fast, for the same reason.
    spread = float(extended.std())
    if spread > 0.0:
        extended = (extended - float(extended.mean())) / spread
    mu, sigma = _window_stats(extended, m)
    qt = _sliding_dot(extended, extended[j_new:])
    d_new = _pair_distances(qt, j_new, mu, sigma, const, m, sqrt2m)

    distances = profile.distances.copy()
    neighbors = profile.neighbor_index.copy()
    cutoff = j_new - excl  # windows with |i - j_new| > exclusion
    improved = np.nonzero(d_new[:cutoff] < distances[:cutoff])[0] if cutoff > 0 else []
    distances[improved] = d_new[improved]
    neighbors[improved] = j_new

    candidates = d_new[:cutoff].copy() if cutoff > 0 else np.array([])
    if candidates.size == 0:
        raise InsufficientLengthError(
            "appended window has no admissible neighbor; profile precondition broken"
        )
    nb = int(np.argmin(candidates))
    return MatrixProfile(
        np.append(distances, candidates[nb]),
        np.append(neighbors, nb),
        config,
    )


def top_discords(profile: MatrixProfile, k: int, exclusion: int) -> list[int]:
    """Indices of the k largest profile distances, greedily separated.

    Selection runs in descending distance order (ties to the smaller
    index); a candidate within `exclusion` of an already selected index is
    skipped. Fewer than k indices are returned when the profile cannot
    supply that many separated discords.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order = sorted(range(len(profile)), key=lambda i: (-profile.distances[i], i))
    selected: list[int] = []
    for i in order:
        if all(abs(i - s) > exclusion for s in selected):
            selected.append(i)
            if len(selected) == k:
                break
    return selected
