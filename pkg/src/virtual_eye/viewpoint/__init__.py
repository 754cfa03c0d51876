from .agent import ValidationReport, ViewpointResponse, ViewSelection, parse_response, select_view, validate
from .client import HttpChatClient, MockChatClient, make_client
from .prompt import PromptBundle, build_prompt
from .som import build_som_image

__all__ = [
    "ValidationReport",
    "ViewpointResponse",
    "ViewSelection",
    "parse_response",
    "select_view",
    "validate",
    "HttpChatClient",
    "MockChatClient",
    "make_client",
    "PromptBundle",
    "build_prompt",
    "build_som_image",
]
