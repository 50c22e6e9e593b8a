from .config import ConfigError, TrainConfig
from .metrics import MetricsReport, evaluate, score, uncertainty_groups
from .model import Inference, UCLModel, load_checkpoint, save_checkpoint
from .train import Adam, TrainingDiverged, TrainResult, objective, train
