"""Extreme multi-label learning with SGNS / SPPMI instance and label embeddings."""
from .data import Dataset, build_label_cooccurrence, load_dataset, mask_labels, parse_xmlc_dataset
from .errors import DataError, DegenerateGradientError, ExmldsError, NumericalError, XMLCParseError
from .pipeline import HyperParams, train_model
from .predict import TrainedModel, evaluate, ndcg_at_k, precision_at_k, predict_joint, predict_top_p

__version__ = "0.1.0"
