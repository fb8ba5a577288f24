class ExtractorError(Exception):
    """Base class for extraction failures."""


class CheckpointError(ExtractorError):
    """Checkpoint file is missing, malformed, or incompatible."""


class AudioError(ExtractorError):
    """Waveform cannot be read or does not match the model's front end."""


class DatasetError(ExtractorError):
    """wav.scp / transcript layout problems."""
