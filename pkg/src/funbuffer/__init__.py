"""Penalized functional linear Cox regression with data-driven buffer distances."""
from .basis import BasisSpec, BSplineBasis, PenaltyMatrices, build_basis, functional_design_row, roughness_matrix
from .coxcore import NumericalError, grad_hess, logpl, surrogate
from .inference import (CumulativeEffect, InferenceResult, RegionSelection, cumulative_effect, refit,
                        select_regions, selection_from_intervals, simdiag, variance_curve)
from .solver import FitResult, PenaltyConfig, SolverOptions, fit, fit_smooth
from .survdata import (CsvSchema, DataError, DesignedData, ExposureFunction, SurvivalDataset, center,
                       design, load_csv, write_csv)
from .tuning import TuningGrid, TuningReport, bic, effective_df, make_grid, select

__version__ = "0.1.0"
