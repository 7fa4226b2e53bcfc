// Stdio transport: one JSON request per stdin line, one JSON response per
// stdout line, for pipelines that spawn the provider as a subprocess.

import readline from "node:readline";
import { Endpoint, ServiceSession, handle } from "./service.js";

export async function runStdio(session: ServiceSession, endpoint: Endpoint): Promise<void> {
  const lines = readline.createInterface({ input: process.stdin, terminal: false });
  for await (const line of lines) {
    const raw = line.trim();
    if (!raw) continue;
    let doc: unknown;
    try {
      doc = JSON.parse(raw);
    } catch {
      process.stdout.write(JSON.stringify({ error: "invalid JSON" }) + "\n");
      continue;
    }
    const response = await handle(session, endpoint, doc);
    process.stdout.write(JSON.stringify(response) + "\n");
  }
}
