"""Exception types shared across the package."""


class VoxSegError(Exception):
    """Base class for all voxseg errors."""


# --- grid construction / palettes ---------------------------------------


class EmptyGridError(VoxSegError):
    """A grid was constructed with no active voxels."""


class DuplicateVoxelError(VoxSegError):
    """Two active voxels share the same coordinate."""


class OutOfBoundsError(VoxSegError):
    """A coordinate lies outside [0, resolution)."""


class ChannelRangeError(VoxSegError):
    """A color channel lies outside [-1, +1] or channel count is wrong."""


class PaletteInfeasibleError(VoxSegError):
    """Rejection sampling exhausted its draw budget."""


class PaletteSizeMismatchError(VoxSegError):
    """Palette size does not match the labeling's part count."""


# --- serialization -------------------------------------------------------


class FormatVersionError(VoxSegError):
    """File magic or version does not match the expected format."""


class CorruptPayloadError(VoxSegError):
    """Checksum failure or truncated payload."""


# --- shape generation ----------------------------------------------------


class DegenerateShapeError(VoxSegError):
    """A primitive contributes zero voxels after priority resolution."""


class DatasetExhaustedError(VoxSegError):
    """Too many consecutive shape rejections while sampling a dataset."""


class UnknownPartError(VoxSegError):
    """A part id is outside the labeling's range."""


# --- codec ---------------------------------------------------------------


class ChannelMismatchError(VoxSegError):
    """Grid channel layout does not match what the codec expects."""


class CoordOutsideLatentSupportError(VoxSegError):
    """A requested voxel maps to an inactive latent cell."""


# --- model ---------------------------------------------------------------


class TooManyPointsError(VoxSegError):
    """More than 10 click points were supplied."""


class UnknownTaskError(VoxSegError):
    """Task index is not one of the three supported tasks."""


class DimMismatchError(VoxSegError):
    """Vectors of different dimensionality where equal dims are required."""


class BadDimensionsError(VoxSegError):
    """Guidance map dimensions are not divisible by the patch size."""


class CoordMismatchError(VoxSegError):
    """Noisy latent and geometry latent have different active-cell sets."""


class NonFiniteActivationError(VoxSegError):
    """A forward pass produced NaN or infinite activations."""


# --- flow ----------------------------------------------------------------


class SupportMismatchError(VoxSegError):
    """Two latent grids do not share the same active-cell coordinates."""


class NonFiniteError(VoxSegError):
    """A loss or intermediate value is NaN or infinite."""


class NonFiniteLossError(VoxSegError):
    """Training loss became NaN or infinite; run aborted."""


# --- metrics / decoding --------------------------------------------------


class LengthMismatchError(VoxSegError):
    """Two per-voxel sequences have different lengths."""


class GridMismatchError(VoxSegError):
    """Two labelings do not describe the same grid."""


class EmptyDatasetError(VoxSegError):
    """A metrics protocol was invoked on an empty dataset."""


# --- harness -------------------------------------------------------------


class CodecNotFrozenError(VoxSegError):
    """Flow training requires the codec parameters to be frozen."""


class UnknownProtocolError(VoxSegError):
    """Evaluation protocol name not recognized."""
