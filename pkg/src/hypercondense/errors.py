"""Exception hierarchy shared by all subsystems."""


class HypercondenseError(Exception):
    """Base class. CLI maps subclasses of UserError to exit code 2."""


class UserError(HypercondenseError):
    pass


class ParseError(UserError):
    pass


class EmptyHyperedge(UserError):
    pass


class LabelOutOfRange(UserError):
    pass


class DimensionMismatch(UserError):
    pass


class CannotStratify(UserError):
    pass


class ConfigError(UserError):
    pass


class TooFewSyntheticNodes(UserError):
    pass


class InvalidLambda(UserError):
    pass


class OracleTooLarge(UserError):
    pass


class DegenerateDegree(HypercondenseError):
    pass


class ShapeMismatch(HypercondenseError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class NonScalarLoss(HypercondenseError):
    pass


class DegeneratePrototype(HypercondenseError):
    pass


class NonFiniteLoss(HypercondenseError):
    def __init__(self, epoch, last_finite):
        self.epoch = epoch
        self.last_finite = last_finite
        super().__init__(f"non-finite loss at epoch {epoch} (last finite loss: {last_finite})")
