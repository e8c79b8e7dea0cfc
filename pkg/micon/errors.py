"""Structured exceptions raised across the package.

Each class subclasses the builtin that callers already catch (``ValueError``
for bad input, ``RuntimeError`` for failures while computing,
``FileNotFoundError`` for absent artifacts) and carries the item that caused
the failure so command modules can report it and pick an exit code.
"""


class DimensionMismatchError(ValueError):
    """Input width does not match what a layer expects."""

    def __init__(self, message: str, layer_index: int | None = None) -> None:
        super().__init__(message)
        self.layer_index = layer_index


class SmilesParseError(ValueError):
    """SMILES text outside the supported grammar."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class DatasetFormatError(ValueError):
    """A feature or compound table row violates the table contract."""

    def __init__(self, message: str, row: int | None = None) -> None:
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class SplitError(ValueError):
    """A split protocol cannot be satisfied by the dataset."""


class ConfigError(ValueError):
    """Run configuration is missing a field or holds an invalid value."""


class NonFiniteError(RuntimeError):
    """A loss, gradient or parameter block stopped being finite."""

    def __init__(self, message: str, block: str | None = None, step: int | None = None) -> None:
        super().__init__(message)
        self.block = block
        self.step = step


class MissingArtifactError(FileNotFoundError):
    """A checkpoint, dataset or report expected on disk is absent."""


class UnsatisfiableConstraintError(ValueError):
    """Some query wells have no eligible retrieval candidate."""

    def __init__(self, message: str, well_keys: list[str]) -> None:
        preview = ", ".join(well_keys[:5])
        more = f" (+{len(well_keys) - 5} more)" if len(well_keys) > 5 else ""
        super().__init__(f"{message}: {preview}{more}")
        self.well_keys = well_keys


class MissingControlError(ValueError):
    """A plate that needs negative controls has no DMSO well."""

    def __init__(self, message: str, plate: str) -> None:
        super().__init__(message)
        self.plate = plate


class SeedMismatchError(ValueError):
    """Methods compared in one report were run with different seed counts."""
