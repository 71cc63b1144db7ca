"""Exception hierarchy shared by every switchnet module."""


class SwitchnetError(Exception):
    """Base class for all errors raised by switchnet."""


class ShapeMismatch(SwitchnetError, ValueError):
    pass


class DegenerateBatch(SwitchnetError, ValueError):
    pass


class LabelOutOfRange(SwitchnetError, ValueError):
    pass


class DetachedTensor(SwitchnetError, RuntimeError):
    pass


class MissingGradient(SwitchnetError, RuntimeError):
    pass


class InvalidWidth(SwitchnetError, ValueError):
    pass


class NoScalableLayers(SwitchnetError, ValueError):
    pass


class NoConvLayers(SwitchnetError, ValueError):
    pass


class GeometryMismatch(SwitchnetError, ValueError):
    pass


class DataEmpty(SwitchnetError, ValueError):
    pass


class AllPruned(SwitchnetError, ValueError):
    """A layer would be left without any surviving neuron."""


class BadMagic(SwitchnetError, ValueError):
    pass


class CountMismatch(SwitchnetError, ValueError):
    pass


class TruncatedFile(SwitchnetError, ValueError):
    pass
