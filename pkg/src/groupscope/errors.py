"""Exception hierarchy shared across the engine."""


class GroupScopeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GroupScopeError):
    """Input failed a contract check; maps to CLI exit code 1."""


class MalformedRecord(ValidationError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        msg = f"malformed record at line {line_no}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class DuplicateId(ValidationError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"duplicate id {record_id!r}")


class UnknownGroup(ValidationError):
    def __init__(self, group_id: str):
        self.group_id = group_id
        super().__init__(f"unknown group {group_id!r}")


class UnknownPost(ValidationError):
    def __init__(self, post_id: str):
        self.post_id = post_id
        super().__init__(f"unknown post {post_id!r}")


class GroupMismatch(ValidationError):
    def __init__(self, post_id: str, group_id: str):
        self.post_id = post_id
        self.group_id = group_id
        super().__init__(f"post {post_id!r} does not belong to group {group_id!r}")


class EmptyQuery(ValidationError):
    pass


class EmptyText(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")


class FormatError(GroupScopeError):
    """A persisted artifact is truncated, corrupt or of the wrong kind."""


class VersionMismatch(FormatError):
    def __init__(self, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"format version mismatch: expected {expected}, got {got}")


class EmbedTimeout(GroupScopeError):
    pass


class BadResponse(GroupScopeError):
    def __init__(self, status: int, detail: str = ""):
        self.status = status
        super().__init__(f"bad response (status {status}) {detail}".rstrip())


class EmptyTrainingSet(ValidationError):
    pass


class MissingPlaceholder(ValidationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"template is missing placeholder {{{name}}}")


class EmptyRounds(ValidationError):
    pass


class RetrievalFailed(GroupScopeError):
    """Both retrieval paths failed for one query."""

    def __init__(self, failures: dict):
        self.failures = failures
        super().__init__("both retrieval paths failed: " + "; ".join(
            f"{k}: {v}" for k, v in sorted(failures.items())))
