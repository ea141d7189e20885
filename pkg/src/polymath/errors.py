"""Exception types shared across the package."""


class PolymathError(Exception):
    """Base class for all package-specific errors."""


# --- corpus ---

class DuplicateIdError(PolymathError):
    pass


class EmptyBodyError(PolymathError):
    pass


class UnknownDocError(PolymathError):
    pass


class BadWindowError(PolymathError):
    pass


class UnknownTagError(PolymathError):
    pass


class CorpusFormatError(PolymathError):
    """Every line of a corpus file was malformed."""


# --- index ---

class DimMismatchError(PolymathError):
    pass


class EmptyQueryError(PolymathError):
    pass


class NoEmbeddedChunksError(PolymathError):
    pass


# --- model gateway ---

class BackendError(PolymathError):
    pass


class TransientBackendError(BackendError):
    """Transport or 5xx failure; eligible for retry."""


class BackendTimeoutError(TransientBackendError):
    pass


class AuthFailureError(BackendError):
    pass


class BudgetExhaustedError(BackendError):
    pass


class MalformedBackendReplyError(BackendError):
    pass


class JsonIrrecoverableError(BackendError):
    """JSON extraction failed even after one repair round-trip.

    Carries the raw reply text so traces can record what the model said.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class DimDriftError(BackendError):
    """Embedding backend changed output dimension mid-corpus."""


# --- prompt registry ---

class UnknownTemplateError(PolymathError):
    pass


class MissingBindingError(PolymathError):
    def __init__(self, name: str):
        super().__init__(f"missing binding: {name}")
        self.name = name


class ExtraBindingError(PolymathError):
    def __init__(self, name: str):
        super().__init__(f"extra binding: {name}")
        self.name = name


# --- agents ---

class EmptyPlanError(PolymathError):
    pass


# --- session store ---

class UnknownSessionError(PolymathError):
    pass


class UnknownTurnError(PolymathError):
    pass


# --- evaluation ---

class BenchmarkFormatError(PolymathError):
    pass


class EmptyRunError(PolymathError):
    pass


# --- causal analysis ---

class NonSquareError(PolymathError):
    pass


class UnknownNodeError(PolymathError):
    pass
