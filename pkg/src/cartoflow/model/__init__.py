"""Forecasting network, manual gradients and training loop."""

from .network import ModelConfig, ModelState, backward, forward, init_state, loss_and_grads, predict
from .training import TrainConfig, TrainResult, load_checkpoint, save_checkpoint, train

__all__ = ["ModelConfig", "ModelState", "backward", "forward", "init_state", "loss_and_grads", "predict",
           "TrainConfig", "TrainResult", "load_checkpoint", "save_checkpoint", "train"]
