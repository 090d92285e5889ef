"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the command line
front end can report stage failures uniformly.
"""


class FlowShadowError(Exception):
    code = "error"


# flow-core
class StepFailure(FlowShadowError):
    code = "step_failure"


class Blowup(FlowShadowError):
    code = "blowup"


class ParseError(FlowShadowError):
    code = "parse_error"


class SingularBall(FlowShadowError):
    code = "singular_ball"


# poincare-cocycle
class NearSingularity(FlowShadowError):
    code = "near_singularity"


class DegenerateProjection(FlowShadowError):
    code = "degenerate_projection"


class ZeroPush(FlowShadowError):
    code = "zero_push"


# spectrum
class IllConditioned(FlowShadowError):
    code = "ill_conditioned"


class NoGap(FlowShadowError):
    code = "no_gap"


class AllStable(NoGap):
    code = "all_stable"


class AllUnstable(NoGap):
    code = "all_unstable"


class IndexMismatch(FlowShadowError):
    code = "index_mismatch"


# strings
class GapTooLarge(FlowShadowError):
    code = "gap_too_large"


class NotHyperbolic(FlowShadowError):
    code = "not_hyperbolic"


# shadow
class NoConvergence(FlowShadowError):
    code = "no_convergence"


class Collapsed(FlowShadowError):
    code = "collapsed"


# measures
class BoxTooSmall(FlowShadowError):
    code = "box_too_small"


class OutOfBox(FlowShadowError):
    code = "out_of_box"


# cli
class ConfigError(FlowShadowError):
    code = "config_error"


class MissingCache(FlowShadowError):
    code = "missing_cache"

    def __init__(self, path, message=None):
        self.path = str(path)
        super().__init__(message or f"missing cache: {self.path}")
