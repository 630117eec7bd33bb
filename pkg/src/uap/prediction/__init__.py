from .cv import CVConfig, predict_cv
from .features import feature_size, features, pad_history
from .gmm import (
    EnsemblePrediction,
    GaussianMode,
    GmmStep,
    TrajectoryDistribution,
    integrated_trajectory,
    mean_trajectory,
)
from .losses import loss_wmse, loss_wnll
from .metrics import metrics
from .model import GmmRegressor, ModelConfig, forward, init_model
from .train import (
    TrainConfig,
    TrainingData,
    TrainingDivergence,
    bootstrap_split,
    build_dataset,
    predict_ensemble,
    train_ensemble,
    train_two_phase,
)
