"""Bot/human account classification with epistemic and aleatoric uncertainty."""

from .bloc import BlocAlphabet, Vocabulary, build_vocabulary, encode, featurize, vectorize_tfidf
from .bnn import BayesianModel, VariationalLinearLayer, total_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .data import BOT, HUMAN, AccountTimeline, Action, Event, FeatureMatrix, LabeledDataset, Record, SplitBundle
from .ingest import balance_and_split, load_feature_matrix, load_labels, parse_timelines
from .metrics import MetricsTable, RocCurve, abstention_report, metrics_table, roc_auc, roc_band
from .train import TrainConfig, TrainReport, train
from .uq import (
    AccountPrediction,
    Decision,
    PosteriorSamplingConfig,
    closure_zscore,
    decide,
    posterior_predict,
    uncertainty_profile,
)

__version__ = "0.1.0"
