"""Pipeline configuration: every threshold and size in one place."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class SgamConfig:
    """Thresholds and sizes for area detection, matching and filtering.

    The defaults are the generic-scene settings; use :meth:`indoor` for the
    tighter indoor preset (stricter rejector, higher coverage gate).
    """

    # Area matching thresholds (all on normalized descriptor distances).
    soa_hamming_max: float = 0.5          # reject SOA match if Hamming fraction exceeds this
    sia_l2_max: float = 0.75              # reject SIA match if descriptor L2 exceeds this
    doubt_margin: float = 0.2             # competing candidates closer than this become doubtful

    # Geometry filtering.
    rejector_scale: float = 1.0           # scale on the mean self-consistency threshold
    gmc_coverage_max: float = 0.3         # run global collection when area coverage is below this
    min_matches_for_f: int = 8            # floor for a certifiable fundamental matrix
    inside_area_ransac: bool = False      # RANSAC instead of plain 8-point inside areas

    # Area detection.
    pyramid_ratio: int = 8                # top-layer reduction for intersection-area search
    multiscale_ratios: tuple[float, ...] = (0.8, 1.2, 1.4)
    merge_distance: float = 100.0         # fuse same-label object areas closer than this (px)
    default_area_size: int = 256          # side of the square crop fed to point matchers
    min_object_fraction: float = 1.0 / 100.0   # drop components smaller than this image fraction
    histogram_min_fraction: float = 1.0 / 64.0  # drop labels covering less of a window than this
    boundary_min_run: int = 20            # shortest boundary run that sets a descriptor bit
    sia_min_labels: int = 4               # intersection areas need at least this many labels
    sia_dedup_iou: float = 0.5            # refined windows above this IoU collapse to one

    # Doubtful-assignment search.
    gp_enumeration_cap: int = 720         # exhaustive assignment search up to this many candidates

    # RANSAC defaults. The inlier test is the Sampson distance in squared
    # pixels, so 16.0 admits points within ~4 px of their epipolar line;
    # sized for noisy desk-scale matchers rather than sub-pixel ones.
    ransac_threshold: float = 16.0
    ransac_max_iters: int = 1000
    ransac_confidence: float = 0.999

    # Output assembly.
    max_correspondences: int = 500
    dedup_grid: float = 0.5               # matches closer than this on every coordinate collapse

    @classmethod
    def indoor(cls, **overrides) -> "SgamConfig":
        """Preset for cluttered indoor scenes: stricter rejector, later GMC gate."""
        base = dict(rejector_scale=0.5, gmc_coverage_max=0.6)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        """Raise ValueError when a field is outside its documented range."""
        checks = [
            (0.0 <= self.soa_hamming_max <= 1.0, "soa_hamming_max must be in [0, 1]"),
            (self.sia_l2_max >= 0.0, "sia_l2_max must be non-negative"),
            (0.0 <= self.doubt_margin <= 1.0, "doubt_margin must be in [0, 1]"),
            (self.rejector_scale > 0.0, "rejector_scale must be positive"),
            (0.0 <= self.gmc_coverage_max <= 1.0, "gmc_coverage_max must be in [0, 1]"),
            (self.min_matches_for_f >= 8, "min_matches_for_f must be at least 8"),
            (self.pyramid_ratio >= 1, "pyramid_ratio must be at least 1"),
            (all(r > 0 for r in self.multiscale_ratios), "multiscale ratios must be positive"),
            (self.merge_distance >= 0.0, "merge_distance must be non-negative"),
            (self.default_area_size >= 32, "default_area_size must be at least 32"),
            (0.0 <= self.min_object_fraction < 1.0, "min_object_fraction must be in [0, 1)"),
            (0.0 <= self.histogram_min_fraction < 1.0, "histogram_min_fraction must be in [0, 1)"),
            (self.boundary_min_run >= 1, "boundary_min_run must be at least 1"),
            (self.sia_min_labels >= 2, "sia_min_labels must be at least 2"),
            (0.0 < self.sia_dedup_iou <= 1.0, "sia_dedup_iou must be in (0, 1]"),
            (self.gp_enumeration_cap >= 1, "gp_enumeration_cap must be at least 1"),
            (self.ransac_threshold > 0.0, "ransac_threshold must be positive"),
            (self.ransac_max_iters >= 1, "ransac_max_iters must be at least 1"),
            (0.0 < self.ransac_confidence < 1.0, "ransac_confidence must be in (0, 1)"),
            (self.max_correspondences >= 1, "max_correspondences must be at least 1"),
            (self.dedup_grid > 0.0, "dedup_grid must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)

    def scales(self) -> tuple[float, ...]:
        """Descriptor scales: the configured ratios plus the identity scale."""
        return tuple(sorted(set(self.multiscale_ratios) | {1.0}))

    def to_dict(self) -> dict:
        return asdict(self)
