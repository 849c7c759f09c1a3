"""Exception types shared across the runtime."""


class FcAgentError(Exception):
    """Base class for runtime errors."""


class ConfigError(FcAgentError):
    """Invalid configuration: bad budgets, hierarchy, or config file."""


class ParameterError(FcAgentError, ValueError):
    """An argument is outside its documented domain."""


class WorkspaceError(FcAgentError):
    """Workspace setup or recovery failure."""


class WorkspaceExistsError(WorkspaceError):
    pass


class WorkspaceNotFoundError(WorkspaceError):
    pass


class TransitionError(FcAgentError):
    """A transition violated its preconditions and was rejected."""


class PathEscapeError(FcAgentError):
    """A tool path resolved outside the task directory."""


class ToolError(FcAgentError):
    """A tool failed; the message becomes the action's error result."""


class DocumentReadError(ToolError):
    """External-attention read failed after ``chunks_consulted`` chunks."""

    def __init__(self, message: str, chunks_consulted: int = 0):
        super().__init__(message)
        self.chunks_consulted = chunks_consulted
