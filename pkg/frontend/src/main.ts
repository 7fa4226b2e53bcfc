#!/usr/bin/env node
// Launch command: codesift-provider --mode {embed|rerank|judge|all} --port N
//                 [--dimension D] [--max-chars N] [--model NAME] [--stdio]
//
// HTTP mode serves every endpoint of the chosen mode ("all" serves the three
// of them on one port); --stdio answers line-delimited requests for exactly
// one endpoint instead of opening a socket.

import { HashingEmbedder, LexicalRanker, OverlapJudge } from "./model.js";
import { createServer, listen } from "./server.js";
import { Endpoint, ServiceSession } from "./service.js";
import { runStdio } from "./stdio.js";

interface Options {
  mode: string;
  port: number;
  dimension: number;
  maxChars: number;
  model: string;
  stdio: boolean;
}

function parseArgs(argv: string[]): Options {
  const options: Options = {
    mode: "all",
    port: 8444,
    dimension: 64,
    maxChars: 4096,
    model: "builtin",
    stdio: false,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i++;
      if (i >= argv.length) throw new Error(`missing value for ${flag}`);
      return argv[i];
    };
    switch (flag) {
      case "--mode":
        options.mode = next();
        break;
      case "--port":
        options.port = Number(next());
        break;
      case "--dimension":
        options.dimension = Number(next());
        break;
      case "--max-chars":
        options.maxChars = Number(next());
        break;
      case "--model":
        options.model = next();
        break;
      case "--stdio":
        options.stdio = true;
        break;
      case "--help":
        console.log(
          "usage: codesift-provider [--mode embed|rerank|judge|all] [--port N] " +
            "[--dimension D] [--max-chars N] [--model NAME] [--stdio]",
        );
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  return options;
}

export function buildSession(options: Options): ServiceSession {
  if (options.model !== "builtin") {
    // A real local model wrapper would be instantiated here; the builtin
    // deterministic models are the reference implementation of the protocol.
    throw new Error(`unknown model ${options.model}; only 'builtin' is bundled`);
  }
  return {
    embedder: new HashingEmbedder(options.dimension, options.maxChars),
    ranker: new LexicalRanker(),
    judge: new OverlapJudge(),
    maxChars: options.maxChars,
  };
}

export function endpointsForMode(mode: string): Set<Endpoint> {
  switch (mode) {
    case "embed":
      return new Set<Endpoint>(["embed"]);
    case "rerank":
      return new Set<Endpoint>(["rerank"]);
    case "judge":
      return new Set<Endpoint>(["judge"]);
    case "rerank-judge":
      return new Set<Endpoint>(["rerank", "judge"]);
    case "all":
      return new Set<Endpoint>(["embed", "rerank", "judge"]);
    default:
      throw new Error(`unknown mode ${mode}`);
  }
}

async function main(): Promise<void> {
  const options = parseArgs(process.argv.slice(2));
  const session = buildSession(options);
  if (options.stdio) {
    const endpoints = endpointsForMode(options.mode);
    if (endpoints.size !== 1) {
      throw new Error("--stdio needs a single --mode (embed, rerank, or judge)");
    }
    await runStdio(session, [...endpoints][0]);
    return;
  }
  const server = createServer(session, endpointsForMode(options.mode));
  const port = await listen(server, options.port);
  console.error(
    `codesift-provider serving ${options.mode} on http://127.0.0.1:${port} ` +
      `(embedder=${session.embedder.name}, d=${session.embedder.dimension})`,
  );
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;

if (invokedDirectly) {
  main().catch((err) => {
    console.error(String(err));
    process.exit(1);
  });
}
