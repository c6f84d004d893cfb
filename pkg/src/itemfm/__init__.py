"""Item-item track embeddings from sliding-window co-occurrences."""
from .als import ImplicitModel, train_als
from .cooc import CoocMatrix, WindowConfig, build_cooc, load_cooc, merge, save_cooc
from .embed import EmbeddingSet, compose_final_vectors, load_embeddings, save_embeddings, top_n_similar
from .evaluation import EvalConfig, EvalReport, evaluate, percentile_rank, time_split
from .fm import FeatureSpace, FMParams, encode_instance, gradient, predict
from .ingest import IngestConfig, PositiveInteraction, RawEvent, ingest
from .synthetic import SyntheticConfig, generate
from .trainer import AdaGradState, TrainConfig, objective_value, train, train_epoch

__version__ = "0.1.0"
