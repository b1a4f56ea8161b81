"""Exception hierarchy shared by all modules.

Every error raised on purpose by the library derives from ``GlimmLabError`` and
carries a ``module`` tag plus an optional ``details`` mapping, which the command
line layer serializes into its structured error message.
"""


class GlimmLabError(Exception):
    module = "glimmlab"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def as_dict(self):
        out = {"module": self.module, "error": type(self).__name__, "message": str(self)}
        for key, val in self.details.items():
            try:
                out[key] = val.tolist()
            except AttributeError:
                out[key] = val
        return out


class DegenerateRangeError(GlimmLabError):
    module = "envelope"


class GridMismatchError(GlimmLabError):
    module = "envelope"


class HyperbolicityError(GlimmLabError):
    module = "flux_model"


class DomainExitError(GlimmLabError):
    module = "riemann"


class ContractionError(GlimmLabError):
    module = "riemann"


class DivergenceError(GlimmLabError):
    module = "riemann"


class MergeError(GlimmLabError):
    module = "interaction"


class BlowUpError(GlimmLabError):
    module = "glimm"


class BookkeepingError(GlimmLabError):
    module = "lagrangian"


class PotentialError(GlimmLabError):
    module = "potential"


class ConfigError(GlimmLabError):
    module = "cli"
