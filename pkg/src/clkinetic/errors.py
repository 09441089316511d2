"""Exception and warning types shared across modules."""


class ClkineticError(Exception):
    pass


class DegenerateGradient(ClkineticError):
    pass


class ZeroVelocity(ClkineticError):
    pass


class NoExit(ClkineticError):
    pass


class GrazingRay(ClkineticError):
    pass


class ZeroWeight(ClkineticError):
    pass


class WrongHalfSpace(ClkineticError):
    pass


class DivergentIntegral(ClkineticError):
    pass


class NonUnitOmega(ClkineticError):
    pass


class SingularPoint(ClkineticError):
    pass


class StuckParticle(ClkineticError):
    pass


class ConfigError(ClkineticError):
    pass


class HeavyTailWarning(UserWarning):
    pass
