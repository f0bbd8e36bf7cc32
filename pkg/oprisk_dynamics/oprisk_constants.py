"""Constants for oprisk-dynamics."""

from enum import Enum, auto

import numpy as np


class ErrorCategory(Enum):
    """Machine-readable categories of failures."""

    PARAMETER = auto()
    CONTRACT = auto()
    CLASSIFICATION = auto()
    RESOURCE = auto()
    DATA = auto()
    DEGENERATE_DATA = auto()
    INSUFFICIENT_EVENTS = auto()
    INFEASIBLE = auto()
    UNSUPPORTED = auto()
    FORMAT = auto()
    USAGE = auto()


# Exit status of the CLI for each error category; usage errors share argparse's 2.
EXIT_STATUS = {
    ErrorCategory.PARAMETER: 3,
    ErrorCategory.CONTRACT: 4,
    ErrorCategory.CLASSIFICATION: 5,
    ErrorCategory.RESOURCE: 6,
    ErrorCategory.DATA: 7,
    ErrorCategory.DEGENERATE_DATA: 8,
    ErrorCategory.INSUFFICIENT_EVENTS: 9,
    ErrorCategory.INFEASIBLE: 10,
    ErrorCategory.UNSUPPORTED: 11,
    ErrorCategory.FORMAT: 12,
    ErrorCategory.USAGE: 2,
}


class SubgraphKind(Enum):
    """Shapes of the ancestor subgraph of a process."""

    FREE = auto()
    SINGLE_FREE_PARENT = auto()
    CHAIN_OF_FREE_ROOT = auto()
    MULTIPLE_FREE_PARENTS = auto()
    GENERAL_ACYCLIC = auto()
    HAS_CAUSAL_LOOP = auto()


class Origin(Enum):
    """Where a loss trajectory comes from."""

    SIMULATED = "simulated"
    INGESTED = "ingested"


class GeneratingModel(Enum):
    """Dynamics that produced a simulated loss database."""

    PRIMARY = "primary"
    ALT_CONSTRAINED = "alt-constrained"
    ALT_MEAN_CONSTRAINED = "alt-mean-constrained"
    ALT_ARBITRARY = "alt-arbitrary"


class SeverityMode(Enum):
    """How the severity of the frequency/severity dynamics is chosen."""

    CONSTRAINED = "constrained"
    MEAN_CONSTRAINED = "mean-constrained"
    ARBITRARY = "arbitrary"


class Aggregation(Enum):
    """How per-level coupling candidates are combined."""

    MEAN = "mean"
    WEIGHTED = "weighted"
    SAMPLE = "sample"


class BandMethod(Enum):
    """How forecast bands were obtained."""

    ANALYTIC = "analytic"
    MONTE_CARLO = "monte-carlo"


# Gaussian 3-sigma level and the regulatory level.
DEFAULT_CONFIDENCE = 0.99865
REGULATORY_CONFIDENCE = 0.999

# Enumeration of indicator configurations refuses cones larger than this.
MAX_ENUMERATION_TERMS = 2**24
ENUMERATION_CHUNK = 2**16

# Conditional frequencies resting on fewer events are flagged.
MIN_EVENT_COUNT = 30

# Two forecast bands "overlap almost completely" above this fraction.
BAND_OVERLAP_THRESHOLD = 0.9

# Noise draws are requested from each substream in blocks of this length.
NOISE_BLOCK_LENGTH = 4096

DEFAULT_SEED = 20100
DEFAULT_TRAJECTORIES = 10_000
DEFAULT_REPEATS = 20

# Benchmark scenario: free processes 0 and 1, 2 <- 0, 3 <- 2 <- 0, 4 <- {0, 1}.
BENCHMARK_COUPLING = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.1, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.15, 0.0, 0.0],
        [0.1, 0.1, 0.0, 0.0, 0.0],
    ]
)
BENCHMARK_THETA = (-1.0, -1.0, -1.0, -1.0, -1.0)
BENCHMARK_RATES = (2.0, 3.0, 5.0, 5.0, 5.0)
BENCHMARK_CORR_TIME = 5
BENCHMARK_HORIZON = 200_000
BENCHMARK_FRACTIONS = (1.0, 0.75)

# Relative-error scale of a single fit of the benchmark scenario (f = 1).
BENCHMARK_ERROR_SCALE = {
    "theta": (0.0033, 0.0029, 0.0390, 0.0074, 0.0343),
    "coupling": {(2, 0): 0.0959, (3, 2): 0.1313, (4, 0): 0.0377, (4, 1): 0.1466},
    "rates": (0.0030, 0.0032, 0.0407, 0.0022, 0.0337),
}

DATABASE_HEADER = ("t", "process", "amount")
AMOUNT_FORMAT = "%.17g"
