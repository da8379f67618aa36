"""basinlab: equilibrium selection under peer-aware policy gradient,
measured on tabular games where basin geometry is directly visible."""

__version__ = "0.1.0"

from .games import (GameSpec, JointParams, TrajectoryBatch,
                    GameValidationError, make_stag_hunt, make_ipd,
                    game_from_config, exact_value, sample_trajectories,
                    coop_metric, logit, sigmoid)
from .autodiff import (Dual, grad, jacobian, second_order_grad, solve,
                       JacobianMatrix, UnsupportedPrimitiveError,
                       NestingLimitError)
from .fields import (UnrollConfig, FieldEval, SampledUpdate, eval_v,
                     unroll_inner, eval_corrections, assemble_update,
                     exact_field, sampled_update, ARMS,
                     UnrollDivergenceError, EstimatorBlowupError)
from .learners import (Schedule, ScheduleError, RunRecord, run,
                       classify_success, make_shape_then_cool,
                       paired_run_set, write_run_records)
from .analysis import (GridSpec, BasinGrid, CellMasks, WilsonInterval,
                       grid_sweep, separatrix, masks, alignment_stats,
                       wilson, estimate_mu, estimate_mu_M,
                       verify_fixed_point_shift, verify_drift,
                       sa_diagnostics, lambda_sweep, norm_matched_control,
                       threshold_sweep, make_field, make_correction_field,
                       newton_zero, SOSEstimate)
from .rng import stream
