import logging
import os

import uvicorn
from fastmcp import FastMCP

from shared import config
from tools.index import build_metadata_index, query_metadata_index
from tools.recording import audit_recording, describe_recording, read_slice, validate_metadata

tsdf_mcp = FastMCP("TSDF MCP Server", stateless_http=True)

# Register all tools
tsdf_mcp.tool(validate_metadata)
tsdf_mcp.tool(describe_recording)
tsdf_mcp.tool(audit_recording)
tsdf_mcp.tool(read_slice)
tsdf_mcp.tool(build_metadata_index)
tsdf_mcp.tool(query_metadata_index)

# Create the app
app = tsdf_mcp.http_app()

if __name__ == "__main__":
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    port = int(os.environ.get("PORT", 3002))
    host = os.environ.get("HOST", "0.0.0.0")
    print(f"Starting TSDF MCP server on {host}:{port} (data root {config.DATA_ROOT})")
    uvicorn.run(app, host=host, port=port)
