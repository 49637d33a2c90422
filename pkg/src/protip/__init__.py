"""Automatic ultrasound probe calibration from a cone phantom.

Two tracked sweeps over a plate carrying nine cones of distinct heights are
segmented; cone tips are detected, tracked through each sweep and matched
across sweeps by height; a rigid image-to-marker calibration is solved by
constrained least squares inside RANSAC and refined by maximizing the
normalized cross-correlation between frames of one sweep and reslices of
the other.  A simulator produces sweeps with a known calibration.
"""
from .errors import (CoverageError, DegenerateConfiguration, FormatError, InsufficientFiducials,
                     InsufficientMatches, InvalidArgument, NoConsensus, ProtipError)
from .geom import ImagePoint, RigidTransform, compose, invert, map_to_world, pose_delta
from .phantom import Label, PhantomSpec, default_phantom
from .pipeline import analyze_sweep, calibrate_sweeps
from .simulate import (ImagingGeometry, NoiseConfig, SweepKind, default_calibration,
                       make_trajectory, simulate_sweep)
from .refine import RefineConfig, ncc, reconstruct_slice, refine_calibration
from .solve import RansacConfig, ransac_calibrate, solve_constrained
from .evaluation import ErrorReport, compare_to_gt, fiducial_pair_errors

__version__ = "0.1.0"
