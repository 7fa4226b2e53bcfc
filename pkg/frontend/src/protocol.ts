// Wire types shared by the three endpoints. The pipeline side treats any
// object carrying an "error" key as a backend failure, so handlers reply with
// ErrorResponse instead of throwing across the transport.

export interface ProbeRequest {
  probe: true;
}

export interface EmbedRequest {
  texts: string[];
}

export interface ProbeResponse {
  dimension: number;
}

export interface EmbedResponse {
  embeddings: number[][];
  /** indices of inputs that were truncated to the model's max length */
  truncated?: number[];
}

export interface RerankCandidate {
  identifier: number;
  text: string;
}

export interface RerankRequest {
  query: string;
  candidates: RerankCandidate[];
}

export interface RerankResponse {
  ranking: number[];
}

export interface JudgeRequest {
  query: string;
  code: string;
}

export interface JudgeResponse {
  answer: "yes" | "no";
}

export interface ErrorResponse {
  error: string;
}

export type EmbedReply = ProbeResponse | EmbedResponse | ErrorResponse;
export type RerankReply = RerankResponse | ErrorResponse;
export type JudgeReply = JudgeResponse | ErrorResponse;

export function isProbeRequest(doc: unknown): doc is ProbeRequest {
  return typeof doc === "object" && doc !== null && (doc as ProbeRequest).probe === true;
}

export function parseEmbedRequest(doc: unknown): EmbedRequest | string {
  if (typeof doc !== "object" || doc === null) return "request must be a JSON object";
  const texts = (doc as EmbedRequest).texts;
  if (!Array.isArray(texts) || texts.length === 0) {
    return "embed request needs a non-empty 'texts' array";
  }
  if (!texts.every((t) => typeof t === "string")) {
    return "embed request 'texts' entries must be strings";
  }
  return { texts };
}

export function parseRerankRequest(doc: unknown): RerankRequest | string {
  if (typeof doc !== "object" || doc === null) return "request must be a JSON object";
  const { query, candidates } = doc as RerankRequest;
  if (typeof query !== "string") return "rerank request needs a string 'query'";
  if (!Array.isArray(candidates) || candidates.length === 0) {
    return "rerank request needs a non-empty 'candidates' array";
  }
  const identifiers = new Set<number>();
  for (const candidate of candidates) {
    if (typeof candidate !== "object" || candidate === null) {
      return "each candidate must be an object";
    }
    if (!Number.isInteger(candidate.identifier)) {
      return "each candidate needs an integer 'identifier'";
    }
    if (typeof candidate.text !== "string") {
      return "each candidate needs a string 'text'";
    }
    if (identifiers.has(candidate.identifier)) {
      return "candidate identifiers must be unique";
    }
    identifiers.add(candidate.identifier);
  }
  return { query, candidates };
}

export function parseJudgeRequest(doc: unknown): JudgeRequest | string {
  if (typeof doc !== "object" || doc === null) return "request must be a JSON object";
  const { query, code } = doc as JudgeRequest;
  if (typeof query !== "string") return "judge request needs a string 'query'";
  if (typeof code !== "string") return "judge request needs a string 'code'";
  return { query, code };
}
