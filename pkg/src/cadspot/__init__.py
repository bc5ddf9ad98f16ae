"""Panoptic symbol spotting on vector CAD drawings with a graph attention network."""

from .classes import ClassTable, floorplan_classes, synthetic_classes
from .extract import PanopticPrediction, SymbolInstance, extract, ground_truth
from .geometry import Arc, Circle, Ellipse, Primitive, Segment
from .graph import DrawingGraph, GraphConfig, build_graph
from .model import Ablation, ModelConfig, forward, init_params
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
