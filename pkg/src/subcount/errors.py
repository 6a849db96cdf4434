"""Exception hierarchy shared across the package."""


class SubcountError(Exception):
    pass


# graph construction / mappings
class GraphError(SubcountError, ValueError):
    pass


class DuplicateEdgeTriple(GraphError):
    pass


class DanglingEndpoint(GraphError):
    pass


class LabelOutOfRange(GraphError):
    pass


class DuplicateVertexId(GraphError):
    pass


class NonBijectivePermutation(GraphError):
    pass


class MappingNotTotal(GraphError):
    pass


# encodings
class ValueExceedsSpec(SubcountError, ValueError):
    pass


class IncompatibleSpecs(SubcountError, ValueError):
    pass


# generation
class InfeasibleParams(SubcountError, ValueError):
    pass


class NoAdmissibleEdge(SubcountError):
    pass


class NoCompatibleVertexSet(SubcountError):
    pass


class BudgetInfeasible(SubcountError, ValueError):
    pass


class CapExceededAfterRetries(SubcountError):
    pass


# exact counting
class SizeGuardExceeded(SubcountError, ValueError):
    pass


class CountTimeout(SubcountError):
    """Search exceeded its wall-clock limit; any partial count is unusable."""


class CountCapExceeded(SubcountError):
    """Search found more isomorphisms than the caller allowed."""


# tensors / models / training
class ShapeMismatch(SubcountError, ValueError):
    pass


class BadHeadCount(SubcountError, ValueError):
    pass


class EmptySequence(SubcountError, ValueError):
    pass


class DetachedGraph(SubcountError, RuntimeError):
    pass


class MissingGradients(SubcountError, RuntimeError):
    pass


class UnknownRelationLabel(SubcountError, ValueError):
    pass


class DivergedLoss(SubcountError, FloatingPointError):
    pass


class EmptyDataset(SubcountError, ValueError):
    pass


# files
class ParseError(SubcountError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        super().__init__(f"{where}{message}" if where else message)


class MissingReference(SubcountError, KeyError):
    pass


class LayoutError(SubcountError, FileNotFoundError):
    pass


class InconsistentIndicator(SubcountError, ValueError):
    pass
