"""Privacy risk measurement for trajectory data over spatio-temporal equivalence areas."""

__version__ = "0.1.0"

from .anonymize import NoiseConfig, PerturbReport, average_results, perturb, score_averaged
from .areas import (EquivalenceArea, GridAreaSet, PackedRTree, PolygonAreaSet, build_grid,
                    load_polygon_areas, locate, point_in_polygon)
from .metrics import (AreaScores, MatchTable, ScoreResult, Staircase, TrajectoryScores,
                      build_match_table, k_anonymity, l_diversity, score_area_set, staircase,
                      strict_k, t_closeness)
from .model import (Dataset, FilterConfig, FilterReport, Record, Trajectory, filter_dataset,
                    parse_dataset, trip, write_dataset)
from .report import (ScoreReport, emit_area_geojson, emit_diff_geojson, emit_staircase)
