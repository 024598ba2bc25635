"""Grid square and hole targeting for low/medium magnification microscope
images.

Pipeline stages: segment low-mag pixels with a Poisson mixture, bound the
resulting components with shared-angle rectangles, rank square crops with
summary-statistic models, fit square hole lattices to probability maps,
and score predictions against operator selections.
"""

from ._backend import BACKEND
from .classify import (FEATURE_ORDER, FeatureVector, ForestModel, LinearModel,
                       average_precision, extract_features, load_model,
                       permutation_importance, predict_scores, roc_auc,
                       save_model, train_forest, train_logreg)
from .errors import (CorruptionError, DegenerateDataError, FormatError,
                     GeometryError)
from .evalmatch import (MatchReport, Region, Selection, SessionSummary,
                        aggregate_sessions, load_selections, match,
                        save_selections)
from .imgio import (GrayImage, ProbabilityMap, SmoothingParam, gaussian_blur,
                    load_image, load_pmap, normalize, save_image, save_pmap)
from .lattice import (Centroid, CostWeights, FitParams, HoleCrop, Lattice,
                      candidate_anchor_pairs, centroid_regions, crop_regions,
                      extract_centroids, fit_lattice, lattice_cost,
                      lattice_crops, lattice_points, make_lattice,
                      render_lattice)
from .segment import (PixelComponent, PixelMask, PoissonMixture,
                      classify_pixels, connected_components,
                      decision_boundary, fit_poisson_mixture)
from .squares import (AngleSolution, ConvexPolygon, RotatedRect, SquareCrop,
                      convex_hull, crop_square, detect_squares,
                      min_rect_at_angle, optimize_grid_angle)
from .synth import (LowMagConfig, LowMagTruth, MedMagConfig, MedMagTruth,
                    gen_lowmag, gen_medmag, make_dataset)

__version__ = "0.1.0"
