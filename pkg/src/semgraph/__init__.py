"""Reliable smoothing, tracking, and innovation-rate estimation for noisy
semantic graph streams."""

from .confusion import ConfusionMatrix, ConfusionMetrics, RocCurve, estimate_cm, metrics, prevalence, roc_sweep
from .core import (AtomicGraph, AttributeSet, ClassCatalog, Goal, MultiGraph, NodeRef,
                   goal_filter, split_atoms, validate)
from .errors import (DecodeFailure, DegeneratePatternError, EstimationFailure, InputError,
                     StageError)
from .ged import EditCostTable, GedResult, InnovationEvent, build_costs, ged, smooth
from .hmm import FactorizedModel, FitResult, HmmModel, baum_welch, decode_factorized, m_viterbi, viterbi
from .integrator import (IntegrationPolicy, ScoreModel, ScoreStream, detect, empirical_sigma_ratio,
                         integrate, tune_window, tuning_report)
from .pipeline import InnovationLedger, PipelineConfig, RateReport, message_length, rate, run
from .simkit import (ExtractorModel, ScenarioSpec, Timeline, TruthSegment, emit_graph_stream,
                     emit_scores, gen_extractor, gen_timeline)
from .subspace import (FeatureWindow, InnovationSeries, PcpDecomposition, innovation, pcp,
                       rank_select, reconcile, shrink, windowed_innovation)

__version__ = "0.1.0"
