"""Hardware-aware neural architecture codesign engine.

Global NSGA-II search over small MLP architectures scored by task metric,
BOPs, and surrogate FPGA resource/latency estimates; a combined QAT +
iterative-pruning compression stage; and a lossless firmware-descriptor
export.
"""

__version__ = "0.1.0"
