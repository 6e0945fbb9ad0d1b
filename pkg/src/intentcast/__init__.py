"""intentcast: map-free joint trajectory prediction for traffic agents,
fusing motion history with pose-keypoint intent cues."""

__version__ = "0.1.0"

from .config import ModelConfig, TrainConfig
from .scene import (
    AgentClass,
    AgentState,
    KeyPointFrame,
    MalformedScene,
    ObservedTrack,
    RateMismatch,
    Scene,
    read_scenes,
    validate_scene,
    write_scenes,
)
from .predictor import PredictionSet
from .model import build_params, forward, load_model, predict, save_model
