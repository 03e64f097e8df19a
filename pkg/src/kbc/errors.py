"""Exception hierarchy.

Exit-code contract for the CLI: usage errors exit 1, data errors exit 2,
numerical errors exit 3. Each exception class carries its category.
"""

USAGE = 1
DATA = 2
NUMERICAL = 3


class KbcError(Exception):
    exit_code = DATA


# --- datastore ---------------------------------------------------------

class SchemaError(KbcError):
    pass


class MissingColumn(KbcError):
    pass


class TypeMismatch(KbcError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DuplicateKey(KbcError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class UnknownColumn(KbcError):
    pass


# --- rule / query languages --------------------------------------------

class RuleSyntaxError(KbcError):
    """Parse failure; carries 1-based line and column of the offending token."""

    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnboundVariable(KbcError):
    pass


class ArityMismatch(KbcError):
    pass


class UnknownPredicate(KbcError):
    pass


class DomainUnresolvable(KbcError):
    pass


class UnboundAnswerVariable(KbcError):
    pass


# --- grounding ----------------------------------------------------------

class DomainExplosion(KbcError):
    pass


class UnresolvedDomain(KbcError):
    pass


# --- model / inference --------------------------------------------------

class UnassignedVariable(KbcError):
    pass


class TooLargeToEnumerate(KbcError):
    pass


class ObservedVariable(KbcError):
    pass


class UnknownSample(KbcError):
    pass


class UnknownFamily(KbcError):
    pass


class NonFiniteWeight(KbcError):
    exit_code = NUMERICAL


# --- persistence / cli --------------------------------------------------

class HashMismatch(KbcError):
    pass


class VersionMismatch(KbcError):
    pass


class InvalidSize(KbcError):
    exit_code = USAGE
