/**
 * Greedy token-level matching between a candidate and a reference sentence.
 *
 * Precision averages, over candidate tokens, each token's best cosine
 * against the reference; recall mirrors it from the reference side; F is
 * their harmonic mean. Optional IDF weighting (off by default) weights
 * tokens by rarity across the batch's reference sentences.
 */

import {
  DEFAULT_MODEL_TAG,
  contextualVectors,
  cosine,
  tokenize,
} from "./embedding.js";

export interface PairScore {
  precision: number;
  recall: number;
  f1: number;
}

export interface ScoreOptions {
  modelTag?: string;
  idf?: boolean;
}

export interface BatchScores {
  precision: number[];
  recall: number[];
  f1: number[];
  model_tag: string;
}

/** Document frequency of each token over the reference sentences. */
function documentFrequencies(references: string[]): Map<string, number> {
  const frequencies = new Map<string, number>();
  for (const reference of references) {
    for (const token of new Set(tokenize(reference))) {
      frequencies.set(token, (frequencies.get(token) ?? 0) + 1);
    }
  }
  return frequencies;
}

function idfWeight(token: string, frequencies: Map<string, number>, total: number): number {
  return Math.log((total + 1) / ((frequencies.get(token) ?? 0) + 1)) + 1;
}

function harmonicMean(precision: number, recall: number): number {
  if (precision + recall === 0) {
    return 0;
  }
  return (2 * precision * recall) / (precision + recall);
}

/** Weighted mean of each row's best cosine against the other side. */
function greedySide(
  fromVectors: Float64Array[],
  toVectors: Float64Array[],
  weights: number[],
): number {
  if (fromVectors.length === 0 || toVectors.length === 0) {
    return 0;
  }
  let weightedSum = 0;
  let weightTotal = 0;
  for (let i = 0; i < fromVectors.length; i++) {
    let best = -Infinity;
    for (const other of toVectors) {
      const similarity = cosine(fromVectors[i]!, other);
      if (similarity > best) {
        best = similarity;
      }
    }
    // Scores are promised in [0, 1]; raw cosines live in [-1, 1].
    weightedSum += weights[i]! * Math.min(1, Math.max(0, best));
    weightTotal += weights[i]!;
  }
  return weightTotal === 0 ? 0 : weightedSum / weightTotal;
}

export function scorePair(
  candidate: string,
  reference: string,
  options: ScoreOptions = {},
  frequencies?: Map<string, number>,
  totalReferences?: number,
): PairScore {
  const modelTag = options.modelTag ?? DEFAULT_MODEL_TAG;
  const candidateTokens = tokenize(candidate);
  const referenceTokens = tokenize(reference);
  const candidateVectors = contextualVectors(modelTag, candidateTokens);
  const referenceVectors = contextualVectors(modelTag, referenceTokens);
  const weigh = (tokens: string[]): number[] => {
    if (!options.idf || frequencies === undefined) {
      return tokens.map(() => 1);
    }
    return tokens.map((token) => idfWeight(token, frequencies, totalReferences ?? 1));
  };
  const precision = greedySide(candidateVectors, referenceVectors, weigh(candidateTokens));
  const recall = greedySide(referenceVectors, candidateVectors, weigh(referenceTokens));
  return { precision, recall, f1: harmonicMean(precision, recall) };
}

export function scoreBatch(
  candidates: string[],
  references: string[],
  options: ScoreOptions = {},
): BatchScores {
  const frequencies = options.idf ? documentFrequencies(references) : undefined;
  const precision: number[] = [];
  const recall: number[] = [];
  const f1: number[] = [];
  for (let i = 0; i < candidates.length; i++) {
    const pair = scorePair(
      candidates[i]!,
      references[i]!,
      options,
      frequencies,
      references.length,
    );
    precision.push(pair.precision);
    recall.push(pair.recall);
    f1.push(pair.f1);
  }
  return {
    precision,
    recall,
    f1,
    model_tag: options.modelTag ?? DEFAULT_MODEL_TAG,
  };
}
