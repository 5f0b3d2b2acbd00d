"""Cloned MPC policy: networks, training, datasets and persistence."""
from .dataset import Dataset, DatasetError, read_dataset, write_dataset
from .model import AGENT_SCHEMA, Agent, Decision, FeatureScaler, SchemaError, load, predict_control, save
from .network import FfnnNet, GruNet
from .train import TrainConfig, TrainMetrics, fit_scaler, representation, train, train_representation
