import json
from collections.abc import Sequence

from mcp.server import Server
from mcp.server.stdio import stdio_server
from mcp.shared.exceptions import ErrorData, McpError
from mcp.types import EmbeddedResource, ImageContent, TextContent, Tool

from .errors import ReactError
from .models import Method, ReactTools
from .react_client import ReactClient


def _require(react_client: ReactClient, arguments: dict, name: str) -> str:
    value = arguments.get(name)
    if not value:
        react_client.raise_missing_argument_error(name)
    return value


def _handle_tool_call(
    react_client: ReactClient, name: str, arguments: dict
) -> object:
    """Handle individual tool calls and return results."""
    handlers = {
        ReactTools.DETECT_CHANGES.value: _handle_detect_changes,
        ReactTools.VALIDATE_SNAPSHOT.value: _handle_validate_snapshot,
        ReactTools.CLUSTER_SNAPSHOT.value: _handle_cluster_snapshot,
        ReactTools.APPLY_CHANGE_REPORT.value: _handle_apply_change_report,
        ReactTools.SCORE_REPORT.value: _handle_score_report,
    }

    handler = handlers.get(name)
    if handler:
        return handler(react_client, arguments)

    react_client.raise_unknown_tool_error(name)
    return None


def _handle_detect_changes(
    react_client: ReactClient, arguments: dict
) -> object:
    return react_client.detect_changes(
        _require(react_client, arguments, "ref_path"),
        _require(react_client, arguments, "cur_path"),
        arguments.get("model_path"),
        arguments.get("gamma"),
        Method(arguments.get("method", Method.REACT.value)),
    )


def _handle_validate_snapshot(
    react_client: ReactClient, arguments: dict
) -> object:
    return react_client.validate_snapshot(
        _require(react_client, arguments, "snapshot_path"),
        arguments.get("descriptor_dim"),
        require_clustered=bool(arguments.get("require_clustered", False)),
    )


def _handle_cluster_snapshot(
    react_client: ReactClient, arguments: dict
) -> object:
    return react_client.cluster_snapshot(
        _require(react_client, arguments, "snapshot_path"),
        arguments.get("model_path"),
        arguments.get("gamma"),
        arguments.get("out_path"),
    )


def _handle_apply_change_report(
    react_client: ReactClient, arguments: dict
) -> object:
    return react_client.apply_change_report(
        _require(react_client, arguments, "ref_path"),
        _require(react_client, arguments, "cur_path"),
        _require(react_client, arguments, "report_path"),
        arguments.get("model_path"),
        arguments.get("gamma"),
        arguments.get("out_path"),
    )


def _handle_score_report(react_client: ReactClient, arguments: dict) -> object:
    return react_client.score_report(
        _require(react_client, arguments, "report_path"),
        _require(react_client, arguments, "ground_truth_path"),
        _require(react_client, arguments, "ref_path"),
        _require(react_client, arguments, "cur_path"),
    )


def _path(description: str) -> dict:
    return {"type": "string", "description": description}


_MODEL_AND_GAMMA = {
    "model_path": _path(
        "Embedding model file; defaults to the server's --model"
    ),
    "gamma": {
        "type": "number",
        "description": "Squared-distance threshold for identical objects",
    },
}


def _create_tool_list() -> list[Tool]:
    return [
        Tool(
            name=ReactTools.DETECT_CHANGES.value,
            description=(
                "Match object instances between two scene snapshots and "
                "report matched, absent and new objects"
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    "ref_path": _path("Reference snapshot JSON"),
                    "cur_path": _path("Current snapshot JSON"),
                    **_MODEL_AND_GAMMA,
                    "method": {
                        "type": "string",
                        "enum": [m.value for m in Method],
                        "description": "react (clustered) or greedy",
                    },
                },
                "required": ["ref_path", "cur_path"],
            },
        ),
        Tool(
            name=ReactTools.VALIDATE_SNAPSHOT.value,
            description="List invariant violations of a scene snapshot",
            inputSchema={
                "type": "object",
                "properties": {
                    "snapshot_path": _path("Snapshot JSON to check"),
                    "descriptor_dim": {
                        "type": "integer",
                        "description": "Expected view descriptor length",
                    },
                    "require_clustered": {
                        "type": "boolean",
                        "description": "Treat a missing clustering as error",
                    },
                },
                "required": ["snapshot_path"],
            },
        ),
        Tool(
            name=ReactTools.CLUSTER_SNAPSHOT.value,
            description="Group visually identical instances of a snapshot",
            inputSchema={
                "type": "object",
                "properties": {
                    "snapshot_path": _path("Snapshot JSON to cluster"),
                    **_MODEL_AND_GAMMA,
                    "out_path": _path("Optional file for the result"),
                },
                "required": ["snapshot_path"],
            },
        ),
        Tool(
            name=ReactTools.APPLY_CHANGE_REPORT.value,
            description=(
                "Carry a reference snapshot forward with a change report"
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    "ref_path": _path("Reference snapshot JSON"),
                    "cur_path": _path("Current snapshot JSON"),
                    "report_path": _path("Change report JSON"),
                    **_MODEL_AND_GAMMA,
                    "out_path": _path("Optional file for the result"),
                },
                "required": ["ref_path", "cur_path", "report_path"],
            },
        ),
        Tool(
            name=ReactTools.SCORE_REPORT.value,
            description="F1 scores of a change report against ground truth",
            inputSchema={
                "type": "object",
                "properties": {
                    "report_path": _path("Change report JSON"),
                    "ground_truth_path": _path("Scenario ground truth JSON"),
                    "ref_path": _path("Reference snapshot JSON"),
                    "cur_path": _path("Current snapshot JSON"),
                },
                "required": [
                    "report_path",
                    "ground_truth_path",
                    "ref_path",
                    "cur_path",
                ],
            },
        ),
    ]


def _setup_server_handlers(server: Server, react_client: ReactClient) -> None:
    """Setup MCP server tool handlers."""

    @server.list_tools()
    async def list_tools() -> list[Tool]:
        return _create_tool_list()

    @server.call_tool()
    async def call_tool(
        name: str, arguments: dict
    ) -> Sequence[TextContent | ImageContent | EmbeddedResource]:
        try:
            result = _handle_tool_call(react_client, name, arguments)
            return [
                TextContent(
                    type="text",
                    text=json.dumps(result.model_dump(mode="json"), indent=2),
                )
            ]
        except ReactError as e:
            raise McpError(ErrorData(code=e.code, message=e.message)) from e
        except Exception as e:
            msg = f"Error processing react-sg query: {e!s}"
            raise ValueError(msg) from e


async def serve(model_path: str | None = None, gamma: float = 1.0) -> None:
    server = Server("react-sg")
    react_client = ReactClient(model_path, gamma)

    _setup_server_handlers(server, react_client)

    options = server.create_initialization_options()
    async with stdio_server() as (read_stream, write_stream):
        await server.run(read_stream, write_stream, options)
