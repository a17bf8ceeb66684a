"""Edge-probing benchmark auditing toolkit.

Audits span-classification probing datasets for memorization artifacts,
builds bias-filtered test sets, trains probes on frozen token
representations, and reports accuracy drops and codelengths.
"""

__version__ = "0.1.0"

from epb.errors import DataError, EpbError, NumericError, UsageError

__all__ = ["DataError", "EpbError", "NumericError", "UsageError", "__version__"]
