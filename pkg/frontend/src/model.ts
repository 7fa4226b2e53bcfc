// Locally hosted model implementations behind the three endpoints.
//
// The interfaces are what a real model wrapper would satisfy (a llama-server
// proxy, a transformers pipeline, ...); the bundled defaults are fully
// deterministic so the service can run anywhere and the pipeline's
// reproducibility guarantees extend to provider-backed runs.

export interface EmbeddingModel {
  readonly name: string;
  readonly dimension: number;
  /** raw vectors, deliberately NOT normalized: cosine geometry is the caller's job */
  embed(texts: string[]): Promise<number[][]>;
}

export interface RankingModel {
  readonly name: string;
  rank(query: string, candidates: { identifier: number; text: string }[]): Promise<number[]>;
}

export interface JudgeModel {
  readonly name: string;
  judge(query: string, code: string): Promise<"yes" | "no">;
}

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK64 = 0xffffffffffffffffn;

function fnv1a64(input: string): bigint {
  let hash = FNV_OFFSET;
  const bytes = Buffer.from(input, "utf8");
  for (const byte of bytes) {
    hash ^= BigInt(byte);
    hash = (hash * FNV_PRIME) & MASK64;
  }
  return hash;
}

/** Signed character-3-gram feature hashing; raw bucket counts. */
export class HashingEmbedder implements EmbeddingModel {
  readonly name: string;

  constructor(readonly dimension: number = 64, readonly maxChars: number = 4096) {
    if (dimension < 8) throw new Error(`dimension must be >= 8, got ${dimension}`);
    this.name = `hashing-3gram:d=${dimension}`;
  }

  embedOne(text: string): number[] {
    const vector = new Array<number>(this.dimension).fill(0);
    const padded = "\u0002" + text.toLowerCase() + "\u0003";
    for (let i = 0; i + 3 <= padded.length; i++) {
      const hash = fnv1a64(padded.slice(i, i + 3));
      const bucket = Number(hash % BigInt(this.dimension));
      const sign = (hash >> 63n) & 1n ? 1 : -1;
      vector[bucket] += sign;
    }
    const mass = vector.reduce((acc, value) => acc + Math.abs(value), 0);
    if (mass === 0) {
      vector[Number(fnv1a64(text) % BigInt(this.dimension))] = 1;
    }
    return vector;
  }

  async embed(texts: string[]): Promise<number[][]> {
    return texts.map((text) => this.embedOne(text));
  }
}

/** Orders candidates by query-token overlap, ties by identifier. */
export class LexicalRanker implements RankingModel {
  readonly name = "lexical-overlap";

  async rank(
    query: string,
    candidates: { identifier: number; text: string }[],
  ): Promise<number[]> {
    const queryTokens = new Set(query.toLowerCase().split(/\s+/).filter(Boolean));
    const scored = candidates.map((candidate) => {
      const tokens = new Set(candidate.text.toLowerCase().split(/\s+/).filter(Boolean));
      let overlap = 0;
      for (const token of queryTokens) if (tokens.has(token)) overlap++;
      const score = queryTokens.size ? overlap / queryTokens.size : 0;
      return { identifier: candidate.identifier, score };
    });
    scored.sort((a, b) => b.score - a.score || a.identifier - b.identifier);
    return scored.map((entry) => entry.identifier);
  }
}

/** Yes iff enough of the query's tokens appear in the code. */
export class OverlapJudge implements JudgeModel {
  readonly name = "token-overlap";

  constructor(readonly threshold: number = 0.5) {}

  async judge(query: string, code: string): Promise<"yes" | "no"> {
    if (code.includes(query)) return "yes";
    const queryTokens = query.toLowerCase().split(/\s+/).filter(Boolean);
    if (queryTokens.length === 0) return "no";
    const codeTokens = new Set(code.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean));
    const hits = queryTokens.filter((token) => codeTokens.has(token)).length;
    return hits / queryTokens.length >= this.threshold ? "yes" : "no";
  }
}
