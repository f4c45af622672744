"""Small numpy networks: dense and LSTM layers, Adam training, layer freezing."""
from .checkpoint import load_network, network_from_dict, network_to_dict, params_digest, save_network
from .layers import LSTM, Dense, Dropout, ReshapeAddInput
from .models import NeuralForecaster, PooledAR, build_sub_tsgm, design_matrix, pooled_ar_fit
from .network import Network, build_network
from .training import Adam, GridResult, HyperGrid, TrainConfig, TrainHistory, grid_search, mse, train

__all__ = [
    "LSTM", "Adam", "Dense", "Dropout", "GridResult", "HyperGrid", "Network", "NeuralForecaster",
    "PooledAR", "ReshapeAddInput", "TrainConfig", "TrainHistory", "build_network", "build_sub_tsgm",
    "design_matrix", "grid_search", "load_network", "mse", "network_from_dict", "network_to_dict",
    "params_digest", "pooled_ar_fit", "save_network", "train",
]
