// Transport-independent request handling: the HTTP server and the stdio loop
// both delegate here, so every response is schema-checked in one place and a
// model failure becomes an error object instead of a hang or a crash.

import {
  EmbedReply,
  JudgeReply,
  RerankReply,
  isProbeRequest,
  parseEmbedRequest,
  parseJudgeRequest,
  parseRerankRequest,
} from "./protocol.js";
import { EmbeddingModel, JudgeModel, RankingModel } from "./model.js";

export interface ServiceSession {
  embedder: EmbeddingModel;
  ranker: RankingModel;
  judge: JudgeModel;
  maxChars: number;
}

export async function handleEmbed(session: ServiceSession, doc: unknown): Promise<EmbedReply> {
  if (isProbeRequest(doc)) {
    return { dimension: session.embedder.dimension };
  }
  const request = parseEmbedRequest(doc);
  if (typeof request === "string") return { error: request };
  const truncated: number[] = [];
  const texts = request.texts.map((text, index) => {
    if (text.length > session.maxChars) {
      truncated.push(index);
      return text.slice(0, session.maxChars);
    }
    return text;
  });
  try {
    const embeddings = await session.embedder.embed(texts);
    if (embeddings.length !== texts.length) {
      return { error: "model returned a wrong number of vectors" };
    }
    return truncated.length ? { embeddings, truncated } : { embeddings };
  } catch (err) {
    return { error: `embedding model failed: ${String(err)}` };
  }
}

export async function handleRerank(session: ServiceSession, doc: unknown): Promise<RerankReply> {
  const request = parseRerankRequest(doc);
  if (typeof request === "string") return { error: request };
  try {
    const ranking = await session.ranker.rank(request.query, request.candidates);
    const wanted = request.candidates.map((c) => c.identifier).sort((a, b) => a - b);
    const got = [...ranking].sort((a, b) => a - b);
    if (wanted.length !== got.length || wanted.some((v, i) => v !== got[i])) {
      return { error: "model produced a non-permutation ranking" };
    }
    return { ranking };
  } catch (err) {
    return { error: `ranking model failed: ${String(err)}` };
  }
}

export async function handleJudge(session: ServiceSession, doc: unknown): Promise<JudgeReply> {
  const request = parseJudgeRequest(doc);
  if (typeof request === "string") return { error: request };
  try {
    const answer = await session.judge.judge(request.query, request.code);
    if (answer !== "yes" && answer !== "no") {
      return { error: `model produced an invalid verdict: ${String(answer)}` };
    }
    return { answer };
  } catch (err) {
    return { error: `judge model failed: ${String(err)}` };
  }
}

export type Endpoint = "embed" | "rerank" | "judge";

export async function handle(
  session: ServiceSession,
  endpoint: Endpoint,
  doc: unknown,
): Promise<EmbedReply | RerankReply | JudgeReply> {
  switch (endpoint) {
    case "embed":
      return handleEmbed(session, doc);
    case "rerank":
      return handleRerank(session, doc);
    case "judge":
      return handleJudge(session, doc);
  }
}
