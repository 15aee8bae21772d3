"""Exceptions separating expected runtime failures from contract violations.

PipelineError covers failures a correct caller can hit (missing files,
malformed inputs, schema mismatches); the CLI maps it to exit code 1.
Contract violations (bad parameter values, broken invariants) raise
ValueError and map to exit code 2.
"""


class PipelineError(Exception):
    """Expected failure: bad or missing input, I/O problem, schema mismatch."""


class StageError(PipelineError):
    """Failure inside a named pipeline stage."""

    def __init__(self, stage: str, detail: str):
        super().__init__(f"stage '{stage}': {detail}")
        self.stage = stage
