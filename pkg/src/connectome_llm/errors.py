"""Exception hierarchy.

Every error carries the name of the module that raised it so the CLI can
print a single structured line per failure.
"""


class ConnectomeLLMError(Exception):
    module = "connectome_llm"

    def __init__(self, message, *, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module


class DimensionError(ConnectomeLLMError, ValueError):
    module = "autograd"


class NumericError(ConnectomeLLMError, ArithmeticError):
    module = "autograd"


class ContractError(ConnectomeLLMError, RuntimeError):
    module = "autograd"


class StaleTapeError(ContractError):
    pass


class KinkError(ContractError):
    """Finite differences straddle a non-differentiable point."""

    def __init__(self, message, coordinates):
        super().__init__(message)
        self.coordinates = list(coordinates)


class ParseError(ConnectomeLLMError, ValueError):
    module = "timeseries_io"


class LabelError(ConnectomeLLMError, ValueError):
    module = "timeseries_io"


class ManifestError(ConnectomeLLMError, ValueError):
    module = "timeseries_io"


class CohortError(ConnectomeLLMError, ValueError):
    module = "timeseries_io"


class SpecError(ConnectomeLLMError, ValueError):
    module = "timeseries_io"


class DegenerateWindowError(ConnectomeLLMError, ValueError):
    module = "connectome"

    def __init__(self, message, window, roi):
        super().__init__(message)
        self.window = window
        self.roi = roi


class SizeError(ConnectomeLLMError, ValueError):
    module = "graph_distance"


class IncompatibleSummaryError(ConnectomeLLMError, ValueError):
    module = "graph_distance"


class DegenerateScaleError(ConnectomeLLMError, ValueError):
    module = "revrin"

    def __init__(self, message, feature):
        super().__init__(message)
        self.feature = feature


class StateError(ConnectomeLLMError, ValueError):
    module = "revrin"


class TooShortError(ConnectomeLLMError, ValueError):
    module = "patch_embed"


class ConfigError(ConnectomeLLMError, ValueError):
    module = "config"


class LoadError(ConnectomeLLMError, ValueError):
    module = "backbone"


class GridError(ConnectomeLLMError, ValueError):
    module = "train_eval"


class ValidationError(ConnectomeLLMError, ValueError):
    """Run configuration failed validation; ``field`` names the culprit."""

    module = "cli"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
