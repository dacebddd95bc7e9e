# Tests for MCP-TDO server
