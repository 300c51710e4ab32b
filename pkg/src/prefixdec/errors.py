"""Exception taxonomy for the package.

Everything derives from PrefixDecError so callers can catch the family.
Profile-file problems share the ProfileLoadError branch because the CLI
maps all of them to the same usage exit code.
"""


class PrefixDecError(Exception):
    pass


# ---- forest construction / lookup ----

class CycleDetected(PrefixDecError):
    pass


class DanglingParent(PrefixDecError):
    pass


class PathNotPrefixChain(PrefixDecError):
    pass


class DimensionMismatch(PrefixDecError):
    pass


class UnknownRequest(PrefixDecError):
    pass


class UnknownNode(PrefixDecError):
    pass


# ---- attention primitives ----

class ShapeMismatch(PrefixDecError):
    pass


class EmptyVisibleSet(PrefixDecError):
    pass


class NoVisibleTokens(PrefixDecError):
    pass


# ---- execution ----

class PlanForestMismatch(PrefixDecError):
    pass


class IncompletePartials(PrefixDecError):
    pass


# ---- cost model / profiles ----

class ProfileLoadError(PrefixDecError):
    pass


class IncompleteGrid(ProfileLoadError):
    pass


class NonPositiveCost(ProfileLoadError):
    pass


class DuplicateKnot(ProfileLoadError):
    pass


# ---- scheduling ----

class SearchSpaceOverflow(PrefixDecError):
    pass


class InstanceTooLarge(PrefixDecError):
    pass


# ---- workloads / CLI ----

class RemainderInfeasible(PrefixDecError):
    pass


class SpecError(PrefixDecError):
    pass


class UnknownAxis(PrefixDecError):
    pass
