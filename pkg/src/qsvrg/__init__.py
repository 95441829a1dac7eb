"""Communication-efficient SVRG: quantized lattices, metered simulation, bounds."""

from .quantizer import GridSpec, QuantizedVector, quantize, dequantize, encode, decode, vertex_of
from .objective import LabeledDataset, RidgeLogistic, Quadratic
from .netsim import BitMeter, Network, nominal_bits
from .optimizers import ALGORITHMS, OptimizerConfig, run
from .theory import ProblemConstants

__version__ = "0.1.0"
