"""Exception types shared across the package."""


class RLMoEError(Exception):
    """Base class for every error raised by rlmoe."""


class IndexOutOfRange(RLMoEError, IndexError):
    pass


class DimensionMismatch(RLMoEError, ValueError):
    pass


class NonFiniteInput(RLMoEError, ValueError):
    pass


class ExternalProviderUnavailable(RLMoEError):
    pass


class ProviderDimensionMismatch(DimensionMismatch):
    pass


class EmptyReferenceList(RLMoEError, ValueError):
    pass


class EmptyCorpusStats(RLMoEError, ValueError):
    pass


class AlphaNotNormalized(RLMoEError, ValueError):
    pass


class MissingLexicon(RLMoEError, FileNotFoundError):
    pass


class EmptyPromptStore(RLMoEError, ValueError):
    pass


class MissingExpertText(RLMoEError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class RemoteExpertUnavailable(RLMoEError):
    pass


class MalformedRemoteResponse(RLMoEError, ValueError):
    pass


class EmptyDataset(RLMoEError, ValueError):
    pass


class EmptyActionList(RLMoEError, ValueError):
    pass


class EmptyBatch(RLMoEError, ValueError):
    pass


class NonFiniteGradient(RLMoEError, FloatingPointError):
    pass


class TaskTooLarge(RLMoEError, ValueError):
    pass


class ImageTooSmall(RLMoEError, ValueError):
    pass


class EmptyGallery(RLMoEError, ValueError):
    pass


class UnknownIdentity(RLMoEError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyScoreList(RLMoEError, ValueError):
    pass


class MalformedRecord(RLMoEError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class FeatureDimensionMismatch(MalformedRecord):
    pass


class DuplicateSceneId(MalformedRecord):
    pass


class MissingScene(RLMoEError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownVersion(RLMoEError, ValueError):
    pass


class ShapeMismatch(RLMoEError, ValueError):
    pass


class CorruptCheckpoint(RLMoEError, ValueError):
    pass


class ConfigurationError(RLMoEError, ValueError):
    pass
