"""Deletion propagation for gradient-trained linear and logistic models:
train with provenance capture, then update parameters incrementally when
training samples are removed, matching retraining at a fraction of the cost.
"""

from .core import (BINARY_LOGISTIC, LINEAR, MULTINOMIAL_LOGISTIC,
                   BatchSchedule, DeletionRequest, Hyperparams, ModelParams,
                   TrainingDataset, build_schedule, effective_batch_size)
from .trainer import TrainRun, estimate_lipschitz, gradient, objective, train
from .linearizer import InterpolationTable, LinearCoeffs, extract_coeffs, interpolant
from .capture import (DENSE_FULL, DENSE_SVD, SPARSE_LINEARIZED,
                      ProvenanceCache, cache_stats, capture, load_cache,
                      save_cache)
from .update import (UpdateReport, priu_linear, priu_logistic,
                     priu_sparse_logistic)
from .opt import (EigenCache, build_eigen_cache_linear,
                  build_eigen_cache_logistic, opt_linear, opt_logistic)
from .baselines import closed_form_linear, infl_update, retrain
from .metrics import cosine_sim, l2_dist, mse, sign_flip_report, validation_accuracy
from .provalg import (AnnotatedMatrix, ProvPolynomial, annot_add, annot_mul,
                      poly_add, poly_mul, specialize, symbolic_train)
from .errors import (CacheFormatError, ConfigError, DataError, DelpropError,
                     NumericError, SymbolicLimitError, TrainingDivergedError)

__version__ = "0.1.0"
