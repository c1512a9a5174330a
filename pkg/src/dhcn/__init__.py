"""Deep hierarchical context networks for multi-label image annotation."""

from .context_graph import GeometricContext, GridSpec, build_geometric_adjacency, build_semantic_adjacency
from .data import Dataset, load_dataset, write_dataset
from .errors import DhcnError, NumericalError, ShapeError, ValidationError
from .feature_maps import InitialMapSpec, fit_kpca, hi_kernel
from .metrics import EvalReport, average_precision, evaluate, mean_average_precision, mf_concept, mf_sample
from .model import DhcnModel, load_model, save_model
from .network import DepthConfig, PerLayerContexts, forward, pool
from .svm import SvmModel, train_svms
from .training import TrainConfig, gradcheck, train

__version__ = "0.1.0"
