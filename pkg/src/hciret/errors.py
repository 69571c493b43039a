"""Exception taxonomy shared across the package.

UsageError means the caller violated an interface contract (bad shapes,
bad flag values); the CLI maps it to exit code 2. DataError means the
input data or files are invalid (corrupt streams, dangling references,
non-finite values); the CLI maps it to exit code 3.
"""


class UsageError(ValueError):
    """The caller broke an API contract."""


class DataError(ValueError):
    """Input data, files, or streams are invalid."""
