"""4D constellations, their PMFs and amplitude-class structure.

A constellation point is one dual-polarization time slot, stored as four
real coordinates (Re/Im of pol X, Re/Im of pol Y).  Every constructor and
transform in this module returns a constellation normalized to unit mean
4D energy under its PMF; launch power is applied later, in the channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegeneratePmfError

PMF_ATOL = 1e-12
POWER_ATOL = 1e-12
ENERGY_REL_TOL = 1e-9
# Pairwise distinctness is checked exhaustively only up to this size;
# larger constellations get an exact-duplicate check (O(n log n)).
_PAIRWISE_CHECK_MAX = 1024


@dataclass
class Constellation4D:
    """An ordered set of 4D points with a probability per point.

    Points with probability exactly 0 are kept in place (so indices stay
    stable under pruning) and are treated as pruned: they are excluded
    from the distinctness requirement and from all support-weighted
    statistics.
    """

    points: np.ndarray  # (n, 4) float64
    pmf: np.ndarray  # (n,) float64
    name: str = ""

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.pmf = np.ascontiguousarray(self.pmf, dtype=np.float64)
        self.validate()
        self.points.flags.writeable = False
        self.pmf.flags.writeable = False

    def validate(self):
        if self.points.ndim != 2 or self.points.shape[1] != 4:
            raise ValueError(f"points must be (n, 4), got {self.points.shape}")
        n = self.points.shape[0]
        if n == 0:
            raise ValueError("constellation must contain at least one point")
        if self.pmf.shape != (n,):
            raise ValueError("pmf length must match point count")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")
        if np.any(self.pmf < 0):
            raise ValueError("pmf entries must be nonnegative")
        if abs(self.pmf.sum() - 1.0) > PMF_ATOL:
            raise ValueError(f"pmf must sum to 1 (got {self.pmf.sum()!r})")
        live = self.points[self.pmf > 0]
        if live.shape[0] == 0:
            raise DegeneratePmfError("no point carries positive probability")
        # Exact duplicates among live points are always rejected; the full
        # pairwise 1e-12 distance check is restricted to small sets.
        uniq = np.unique(live, axis=0)
        if uniq.shape[0] != live.shape[0]:
            raise ValueError("constellation contains duplicate live points")
        if live.shape[0] <= _PAIRWISE_CHECK_MAX:
            d2 = np.sum((live[:, None, :] - live[None, :, :]) ** 2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            if np.min(d2) <= (1e-12) ** 2:
                raise ValueError("live points closer than the 1e-12 distinctness bound")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of points with nonzero probability."""
        return self.pmf > 0

    def energies(self) -> np.ndarray:
        return np.sum(self.points**2, axis=1)

    def mean_energy(self) -> float:
        return float(self.pmf @ self.energies())

    def renamed(self, name: str) -> "Constellation4D":
        return replace(self, name=name)


@dataclass
class AmplitudeClass:
    energy: float  # shared 4D energy of the members, pre-scaling
    member_indices: np.ndarray
    class_probability: float
    scale: float = 1.0

    def __post_init__(self):
        self.member_indices = np.asarray(self.member_indices, dtype=np.intp)

    @property
    def size(self) -> int:
        return int(self.member_indices.size)


@dataclass
class AmplitudeClassSet:
    """Partition of a constellation's indices into equal-energy classes."""

    classes: list[AmplitudeClass]
    n_parent_points: int
    parent_power: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = np.concatenate([c.member_indices for c in self.classes])
        if seen.size != self.n_parent_points or np.unique(seen).size != seen.size:
            raise ValueError("classes must partition the parent point indices")
        if np.any((seen < 0) | (seen >= self.n_parent_points)):
            raise ValueError("member index out of range")
        energies = [c.energy for c in self.classes]
        if any(e2 < e1 for e1, e2 in zip(energies, energies[1:])):
            raise ValueError("classes must be sorted by ascending energy")
        total = sum(c.class_probability for c in self.classes)
        if abs(total - 1.0) > PMF_ATOL:
            raise ValueError(f"class probabilities must sum to 1 (got {total!r})")
        for c in self.classes:
            if c.class_probability < 0:
                raise ValueError("class probability must be nonnegative")
            if not c.scale > 0:
                # Scale 0 would collapse the class onto the origin; classes
                # are removed through probability 0, never through scale.
                raise ValueError("class scale must be strictly positive")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def probabilities(self) -> np.ndarray:
        return np.array([c.class_probability for c in self.classes])

    def scales(self) -> np.ndarray:
        return np.array([c.scale for c in self.classes])

    def with_state(self, probabilities, scales) -> "AmplitudeClassSet":
        """Copy of this class set with new probability/scale vectors."""
        classes = [
            AmplitudeClass(c.energy, c.member_indices, float(p), float(s))
            for c, p, s in zip(self.classes, probabilities, scales)
        ]
        return AmplitudeClassSet(classes, self.n_parent_points, self.parent_power)


@dataclass
class MomentReport:
    mean_energy: float
    papr: float
    mu4: float  # E|X|^4 / (E|X|^2)^2
    mu6: float  # E|X|^6 / (E|X|^2)^3
    entropy_bits: float


def _normalize_power(points: np.ndarray, pmf: np.ndarray) -> np.ndarray:
    p = np.sum(points**2, axis=1) @ pmf
    if p <= 0:
        raise DegeneratePmfError("mean energy is zero, cannot normalize")
    return points / math.sqrt(p)


def _pam_levels(n_levels: int) -> np.ndarray:
    # odd-integer grid: +-1, +-3, ..., +-(n_levels-1)
    return np.arange(-(n_levels - 1), n_levels, 2, dtype=np.float64)


def build_product_qam(m_per_pol: int) -> Constellation4D:
    """Cartesian product of two identical square-QAM constellations.

    ``m_per_pol`` is the QAM order per polarization and must be a perfect
    square with an even side (4, 16, 36, 64, ... ; the classic orders are
    4, 16, 64, 256).  The result has ``m_per_pol**2`` points, a uniform
    PMF, unit mean energy, and a deterministic order: lexicographic over
    the per-polarization symbol indices, which themselves run over the
    (I, Q) grid row-major.
    """
    side = math.isqrt(int(m_per_pol))
    if m_per_pol < 4 or side * side != m_per_pol or side % 2 != 0:
        raise ValueError(
            f"m_per_pol must be a perfect square >= 4 with even side, got {m_per_pol}"
        )
    levels = _pam_levels(side)
    i, q = np.meshgrid(levels, levels, indexing="ij")
    pol = np.column_stack([i.ravel(), q.ravel()])  # (m, 2), row-major over (I, Q)
    m = pol.shape[0]
    a = np.repeat(pol, m, axis=0)
    b = np.tile(pol, (m, 1))
    points = np.hstack([a, b])
    pmf = np.full(m * m, 1.0 / (m * m))
    return Constellation4D(_normalize_power(points, pmf), pmf, name=f"qam{m_per_pol}sq")


def build_product_pam16_4d() -> Constellation4D:
    """4D product of 16-PAM per real dimension (256QAM per polarization).

    65536 points, uniform PMF, unit mean energy.  As a point set this
    equals build_product_qam(256); the point order is lexicographic over
    the four level indices.
    """
    levels = _pam_levels(16)
    grids = np.meshgrid(levels, levels, levels, levels, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    pmf = np.full(points.shape[0], 1.0 / points.shape[0])
    return Constellation4D(_normalize_power(points, pmf), pmf, name="pam16-4d")


def amplitude_classes(c: Constellation4D, rel_tol: float = ENERGY_REL_TOL) -> AmplitudeClassSet:
    """Partition the points of ``c`` by 4D energy.

    Two energies belong to the same class when they differ by at most
    ``rel_tol`` relative to the larger one.  Classes come back sorted by
    ascending energy, carrying the total probability of their members and
    unit scale.
    """
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")
    e = c.energies()
    order = np.argsort(e, kind="stable")
    es = e[order]
    # boundaries where consecutive sorted energies differ beyond tolerance
    gaps = np.flatnonzero(np.diff(es) > rel_tol * np.maximum(es[1:], 1e-300))
    starts = np.concatenate([[0], gaps + 1])
    ends = np.concatenate([gaps + 1, [es.size]])
    classes = []
    for s, t in zip(starts, ends):
        idx = np.sort(order[s:t])
        classes.append(
            AmplitudeClass(
                energy=float(np.mean(es[s:t])),
                member_indices=idx,
                class_probability=float(np.sum(c.pmf[idx])),
                scale=1.0,
            )
        )
    return AmplitudeClassSet(classes, c.n_points, parent_power=1.0)


def mb_pmf(c: Constellation4D, lam: float) -> Constellation4D:
    """Exponential-family PMF over the points of ``c``.

    Point i gets probability proportional to exp(-lam * |x_i|^2), where
    the energies are taken in c's own (unit-mean-energy) normalization;
    lam may be negative, which favors high-energy points.  The points are
    rescaled afterwards so the mean energy under the new PMF is 1 again.
    """
    if not np.isfinite(lam):
        raise ValueError("lam must be finite")
    w = -lam * c.energies()
    w -= w.max()  # overflow-safe
    p = np.exp(w)
    p /= p.sum()
    return Constellation4D(_normalize_power(c.points, p), p, name=f"{c.name}-mb")


def mb_for_awgn_snr(
    c: Constellation4D,
    snr_db: float,
    lam_max: float = 10.0,
    lam_resolution: float = 0.005,
    oracle_samples: int = 50_000,
) -> tuple[Constellation4D, float]:
    """Best nonnegative-lam exponential PMF for an AWGN channel at snr_db.

    Maximizes the numeric AWGN MI oracle over lam >= 0 with a coarse grid
    followed by golden-section refinement down to ``lam_resolution``.
    Returns the shaped constellation and the selected lam.
    """
    from .air import awgn_mi_oracle  # local import to avoid a module cycle

    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")

    def score(lam: float) -> float:
        return awgn_mi_oracle(mb_pmf(c, lam), snr_db, n_samples=oracle_samples)

    grid = np.linspace(0.0, lam_max, 21)
    vals = [score(l) for l in grid]
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    # golden-section on the bracketing interval
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = score(x1), score(x2)
    while (b - a) > lam_resolution:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = score(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = score(x2)
    lam = max(0.0, (a + b) / 2.0)
    return mb_pmf(c, lam), lam


def md_ball(
    base: Constellation4D, n_ball: int, include_full_shell: bool = False
) -> Constellation4D:
    """Keep the ``n_ball`` lowest-energy points of ``base``, uniform PMF.

    When the energy shell at the cut is only partially filled, the tie is
    broken by the deterministic point order of ``base``; with
    ``include_full_shell`` the cut expands to take the whole shell
    instead.  Survivors are re-normalized to unit mean energy; the
    discarded points are not kept.
    """
    if not 1 <= n_ball <= base.n_points:
        raise ValueError(f"n_ball must be in [1, {base.n_points}], got {n_ball}")
    e = base.energies()
    order = np.argsort(e, kind="stable")  # stable: ties keep base point order
    keep = n_ball
    if include_full_shell and n_ball < base.n_points:
        cut = e[order[n_ball - 1]]
        while keep < base.n_points and e[order[keep]] <= cut * (1 + ENERGY_REL_TOL):
            keep += 1
    idx = np.sort(order[:keep])
    points = base.points[idx]
    pmf = np.full(keep, 1.0 / keep)
    return Constellation4D(
        _normalize_power(points, pmf), pmf, name=f"{base.name}-ball{keep}"
    )


def moments(c: Constellation4D) -> MomentReport:
    """Energy moments and PMF entropy, over the nonzero-probability support."""
    live = c.support
    p = c.pmf[live]
    e = c.energies()[live]
    m1 = float(p @ e)
    return MomentReport(
        mean_energy=m1,
        papr=float(e.max() / m1),
        mu4=float(p @ e**2 / m1**2),
        mu6=float(p @ e**3 / m1**3),
        entropy_bits=float(-(p @ np.log2(p))),
    )


def apply_class_state(base: Constellation4D, acs: AmplitudeClassSet) -> Constellation4D:
    """Realize a class-level (probability, scale) state as a constellation.

    Each class spreads its probability equally over its members and
    multiplies their coordinates by its scale factor.  Classes with zero
    probability stay in the point list as pruned entries.  The result is
    re-normalized to unit mean energy over the live points.
    """
    if acs.n_parent_points != base.n_points:
        raise ValueError("class set does not match the base constellation size")
    total = sum(c.class_probability for c in acs.classes)
    if total <= 0:
        raise DegeneratePmfError("all amplitude classes carry zero probability")
    points = base.points.copy()
    pmf = np.zeros(base.n_points)
    for cl in acs.classes:
        points[cl.member_indices] *= cl.scale
        pmf[cl.member_indices] = cl.class_probability / cl.size
    pmf /= pmf.sum()  # absorb accumulated rounding; classes already sum to 1
    return Constellation4D(_normalize_power(points, pmf), pmf, name=f"{base.name}-shaped")
