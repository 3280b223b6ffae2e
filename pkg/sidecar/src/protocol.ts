/**
 * Request validation for the scoring endpoint.
 *
 * The minimal request is {candidates, references}; model_tag and idf are
 * optional and default server-side, so clients that never configure a
 * model still speak the same protocol.
 */

export interface ScoreRequest {
  candidates: string[];
  references: string[];
  model_tag?: string;
  idf?: boolean;
}

export class ProtocolError extends Error {
  readonly status: number;

  constructor(message: string, status = 400) {
    super(message);
    this.status = status;
  }
}

function isStringList(value: unknown): value is string[] {
  return Array.isArray(value) && value.every((item) => typeof item === "string");
}

export function parseScoreRequest(body: unknown): ScoreRequest {
  if (typeof body !== "object" || body === null || Array.isArray(body)) {
    throw new ProtocolError("request body must be a JSON object");
  }
  const record = body as Record<string, unknown>;
  const { candidates, references } = record;
  if (!isStringList(candidates) || !isStringList(references)) {
    throw new ProtocolError("candidates and references must be lists of strings");
  }
  if (candidates.length === 0) {
    throw new ProtocolError("candidates and references must be non-empty");
  }
  if (candidates.length !== references.length) {
    throw new ProtocolError(
      `list lengths differ: ${candidates.length} candidates, ${references.length} references`,
    );
  }
  const request: ScoreRequest = { candidates, references };
  if (record.model_tag !== undefined) {
    if (typeof record.model_tag !== "string" || record.model_tag === "") {
      throw new ProtocolError("model_tag must be a non-empty string");
    }
    request.model_tag = record.model_tag;
  }
  if (record.idf !== undefined) {
    if (typeof record.idf !== "boolean") {
      throw new ProtocolError("idf must be a boolean");
    }
    request.idf = record.idf;
  }
  return request;
}
