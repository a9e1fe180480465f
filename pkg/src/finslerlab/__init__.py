"""Finsler metric measure spaces in two dimensions: tensors, curvatures,
misalignment constants, Laplacian comparison, a solver for the Finslerian
Schrödinger equation and checks of the Li-Yau and Harnack estimates."""

from .comparison import (ComparisonReport, curvature_lower_bound, distance_field,
                         nonlinear_laplacian_r, ricci_family, verify_comparison)
from .constants import (MisalignmentReport, misalignment_local, misalignment_region,
                        uniform_constants)
from .curvature import (connection, curvatures, distortion_s, hh_curvature, k0_bound,
                        non_riemannian, ricci)
from .estimates import (EstimateParams, HarnackReport, VerificationReport, check_compact_N,
                        check_compact_inf, check_noncompact, harnack_check, li_yau_H)
from .grid import FieldGrid, ball_grid, box_grid, torus_grid
from .metric import (MeasureSpec, MetricSpec, euclidean, funk_disk, fundamental, lebesgue,
                     legendre, parse_metric, poincare_disk, randers, riemannian,
                     riemannian_volume)
from .pde import PotentialSpec, SolverConfig, nonlinear_laplacian_u, solve_schrodinger
from .regions import Ball, Box

__version__ = "0.1.0"

__all__ = [
    "Ball", "Box", "ComparisonReport", "EstimateParams", "FieldGrid", "HarnackReport",
    "MeasureSpec", "MetricSpec", "MisalignmentReport", "PotentialSpec", "SolverConfig",
    "VerificationReport", "ball_grid", "box_grid", "check_compact_N", "check_compact_inf",
    "check_noncompact", "connection", "curvature_lower_bound", "curvatures", "distance_field",
    "distortion_s", "euclidean", "funk_disk", "fundamental", "harnack_check", "hh_curvature",
    "k0_bound", "lebesgue", "legendre", "li_yau_H", "misalignment_local",
    "misalignment_region", "non_riemannian", "nonlinear_laplacian_r", "nonlinear_laplacian_u",
    "parse_metric", "poincare_disk", "randers", "ricci", "ricci_family", "riemannian",
    "riemannian_volume", "solve_schrodinger", "torus_grid", "uniform_constants",
    "verify_comparison",
]
