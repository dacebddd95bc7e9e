import asyncio
from unittest.mock import patch

import pytest
from mcp.server import Server
from mcp.types import CallToolRequest, CallToolRequestParams

from react_sg.errors import ReportMismatchError
from react_sg.models import ChangeReport, Method, ReactTools
from react_sg.server import (
    _create_tool_list,
    _handle_tool_call,
    _setup_server_handlers,
)


class TestToolList:
    def test_every_tool_is_listed(self):
        names = [tool.name for tool in _create_tool_list()]

        assert names == [tool.value for tool in ReactTools]

    def test_required_arguments(self):
        tools = {tool.name: tool for tool in _create_tool_list()}

        assert tools["detect_changes"].inputSchema["required"] == [
            "ref_path",
            "cur_path",
        ]


class TestHandleToolCall:
    @patch("react_sg.react_client.ReactClient.detect_changes")
    def test_detect_changes(self, mock_detect, react_client):
        mock_detect.return_value = ChangeReport()

        result = _handle_tool_call(
            react_client,
            "detect_changes",
            {"ref_path": "/a.json", "cur_path": "/b.json", "gamma": 0.4},
        )

        mock_detect.assert_called_once_with(
            "/a.json", "/b.json", None, 0.4, Method.REACT
        )
        assert result == ChangeReport()

    @patch("react_sg.react_client.ReactClient.validate_snapshot")
    def test_validate_snapshot(self, mock_validate, react_client):
        _handle_tool_call(
            react_client,
            "validate_snapshot",
            {"snapshot_path": "/a.json", "require_clustered": True},
        )

        mock_validate.assert_called_once_with(
            "/a.json", None, require_clustered=True
        )

    @patch("react_sg.react_client.ReactClient.score_report")
    def test_score_report(self, mock_score, react_client):
        arguments = {
            "report_path": "/r.json",
            "ground_truth_path": "/gt.json",
            "ref_path": "/a.json",
            "cur_path": "/b.json",
        }

        _handle_tool_call(react_client, "score_report", arguments)

        mock_score.assert_called_once_with(
            "/r.json", "/gt.json", "/a.json", "/b.json"
        )

    def test_missing_argument(self, react_client):
        with pytest.raises(ValueError, match="Missing required argument"):
            _handle_tool_call(
                react_client, "detect_changes", {"ref_path": "/a.json"}
            )

    def test_unknown_tool(self, react_client):
        with pytest.raises(ValueError, match="Unknown tool: teleport"):
            _handle_tool_call(react_client, "teleport", {})


class TestServerHandlers:
    def _call(self, react_client, name, arguments):
        server = Server("react-sg-test")
        _setup_server_handlers(server, react_client)
        handler = server.request_handlers[CallToolRequest]
        request = CallToolRequest(
            method="tools/call",
            params=CallToolRequestParams(name=name, arguments=arguments),
        )
        return asyncio.run(handler(request))

    @patch("react_sg.react_client.ReactClient.detect_changes")
    def test_react_errors_are_reported(self, mock_detect, react_client):
        mock_detect.side_effect = ReportMismatchError("bad report")

        result = self._call(
            react_client,
            "detect_changes",
            {"ref_path": "/a.json", "cur_path": "/b.json"},
        )

        assert result.root.isError
        assert "bad report" in result.root.content[0].text

    @patch("react_sg.react_client.ReactClient.detect_changes")
    def test_results_are_json_text(self, mock_detect, react_client):
        mock_detect.return_value = ChangeReport(absent=("a",))

        result = self._call(
            react_client,
            "detect_changes",
            {"ref_path": "/a.json", "cur_path": "/b.json"},
        )

        assert '"absent"' in result.root.content[0].text
