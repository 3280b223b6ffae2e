/**
 * Deterministic contextual token embeddings.
 *
 * Each token gets a base vector derived from a cryptographic hash of the
 * model tag and the token, then neighbors are mixed in so the same word
 * embeds differently in different contexts. No model weights are loaded;
 * the hash stands in for them, which keeps every response reproducible
 * byte for byte for a given model tag.
 */

import { createHash } from "node:crypto";

export const EMBEDDING_DIM = 32;
export const DEFAULT_MODEL_TAG = "hash-ctx-32-v1";

/** Weight of each adjacent token mixed into a position's vector. */
const NEIGHBOR_WEIGHT = 0.25;

const BOS = "<s>";
const EOS = "</s>";

/** Lowercased alphanumeric tokens; everything else is a separator. */
export function tokenize(text: string): string[] {
  return text.toLowerCase().match(/[a-z0-9]+/g) ?? [];
}

/** A unit-independent base vector for one token: one dimension per hash byte. */
export function baseVector(modelTag: string, token: string): Float64Array {
  const digest = createHash("sha256").update(`${modelTag}|${token}`).digest();
  const vector = new Float64Array(EMBEDDING_DIM);
  for (let i = 0; i < EMBEDDING_DIM; i++) {
    vector[i] = (digest[i]! - 127.5) / 127.5;
  }
  return vector;
}

function normalized(vector: Float64Array): Float64Array {
  let sumSquares = 0;
  for (const value of vector) {
    sumSquares += value * value;
  }
  const norm = Math.sqrt(sumSquares);
  if (norm === 0) {
    return vector;
  }
  const unit = new Float64Array(vector.length);
  for (let i = 0; i < vector.length; i++) {
    unit[i] = vector[i]! / norm;
  }
  return unit;
}

/**
 * One unit vector per token position, with both neighbors mixed in.
 * Identical token sequences always produce identical vector sequences.
 */
export function contextualVectors(modelTag: string, tokens: string[]): Float64Array[] {
  const padded = [BOS, ...tokens, EOS];
  const bases = padded.map((token) => baseVector(modelTag, token));
  const vectors: Float64Array[] = [];
  for (let i = 1; i <= tokens.length; i++) {
    const mixed = new Float64Array(EMBEDDING_DIM);
    for (let d = 0; d < EMBEDDING_DIM; d++) {
      mixed[d] =
        bases[i]![d]! +
        NEIGHBOR_WEIGHT * bases[i - 1]![d]! +
        NEIGHBOR_WEIGHT * bases[i + 1]![d]!;
    }
    vectors.push(normalized(mixed));
  }
  return vectors;
}

export function cosine(a: Float64Array, b: Float64Array): number {
  let dot = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i]! * b[i]!;
  }
  return dot;
}
