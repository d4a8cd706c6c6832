/**
 * Websocket <-> TCP bridge plus static file hosting for the browser panel.
 * Browsers cannot open raw TCP sockets, so this Node process forwards
 * newline-delimited frames in both directions, validating outbound client
 * frames against the shared schema before they reach the session server.
 *
 * Usage: node dist/browser/bridge.js [--listen 8080] [--target 127.0.0.1:7340]
 */

import { createServer } from "node:http";
import { readFile } from "node:fs/promises";
import { createConnection } from "node:net";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { WebSocketServer, WebSocket } from "ws";

import { makeClientValidator } from "../schema-node.js";

function arg(name: string, fallback: string): string {
  const idx = process.argv.indexOf(`--${name}`);
  return idx >= 0 && process.argv[idx + 1] ? process.argv[idx + 1] : fallback;
}

const listenPort = Number(arg("listen", "8080"));
const [targetHost, targetPort] = arg("target", "127.0.0.1:7340").split(":");
const staticDir = dirname(fileURLToPath(import.meta.url));
const validate = makeClientValidator();

const http = createServer(async (req, res) => {
  const path = req.url === "/" || req.url === undefined ? "/index.html" : req.url;
  try {
    const body = await readFile(join(staticDir, path.replace(/^\//, "")));
    const mime = path.endsWith(".html")
      ? "text/html"
      : path.endsWith(".js")
        ? "text/javascript"
        : "application/octet-stream";
    res.writeHead(200, { "content-type": mime });
    res.end(body);
  } catch {
    res.writeHead(404);
    res.end("not found");
  }
});

const wss = new WebSocketServer({ server: http, path: "/session" });
wss.on("connection", (ws: WebSocket) => {
  const tcp = createConnection({ host: targetHost, port: Number(targetPort) });
  let toBrowser = "";
  tcp.on("data", (chunk) => {
    toBrowser += chunk.toString("utf-8");
    let idx: number;
    while ((idx = toBrowser.indexOf("\n")) >= 0) {
      ws.send(toBrowser.slice(0, idx));
      toBrowser = toBrowser.slice(idx + 1);
    }
  });
  tcp.on("close", () => ws.close());
  tcp.on("error", () => ws.close());
  ws.on("message", (data) => {
    const line = data.toString();
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch {
      ws.send(JSON.stringify({ type: "error", ref: null, reason: "schema",
                               detail: "bridge: invalid JSON" }));
      return;
    }
    const violation = validate(parsed);
    if (violation !== null) {
      ws.send(JSON.stringify({ type: "error", ref: null, reason: "schema",
                               detail: `bridge: ${violation}` }));
      return;
    }
    tcp.write(line + "\n");
  });
  ws.on("close", () => tcp.destroy());
});

http.listen(listenPort, () => {
  console.log(
    `panel on http://127.0.0.1:${listenPort}/ bridging /session -> tcp://${targetHost}:${targetPort}`,
  );
});
