// HTTP transport: POST /embed, /rerank, /judge with JSON bodies. Requests are
// independent (no cross-request state), so concurrent callers are safe.

import http from "node:http";
import { Endpoint, ServiceSession, handle } from "./service.js";

const ENDPOINTS = new Set<Endpoint>(["embed", "rerank", "judge"]);

function readBody(req: http.IncomingMessage, limit = 64 * 1024 * 1024): Promise<string> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    let size = 0;
    req.on("data", (chunk: Buffer) => {
      size += chunk.length;
      if (size > limit) {
        reject(new Error("request body too large"));
        req.destroy();
        return;
      }
      chunks.push(chunk);
    });
    req.on("end", () => resolve(Buffer.concat(chunks).toString("utf8")));
    req.on("error", reject);
  });
}

export function createServer(
  session: ServiceSession,
  allowed: ReadonlySet<Endpoint> = ENDPOINTS,
): http.Server {
  return http.createServer(async (req, res) => {
    const reply = (status: number, doc: unknown) => {
      const body = JSON.stringify(doc);
      res.writeHead(status, {
        "Content-Type": "application/json",
        "Content-Length": Buffer.byteLength(body),
      });
      res.end(body);
    };

    const endpoint = (req.url ?? "").replace(/^\/+/, "") as Endpoint;
    if (req.method !== "POST" || !ENDPOINTS.has(endpoint) || !allowed.has(endpoint)) {
      reply(404, { error: `unknown endpoint ${req.method} ${req.url}` });
      return;
    }
    let doc: unknown;
    try {
      doc = JSON.parse(await readBody(req));
    } catch (err) {
      reply(400, { error: `invalid JSON body: ${String(err)}` });
      return;
    }
    const response = await handle(session, endpoint, doc);
    const failed = typeof response === "object" && response !== null && "error" in response;
    reply(failed ? 400 : 200, response);
  });
}

export function listen(server: http.Server, port: number, host = "127.0.0.1"): Promise<number> {
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => {
      const address = server.address();
      resolve(typeof address === "object" && address ? address.port : port);
    });
  });
}
