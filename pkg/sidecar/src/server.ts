/**
 * HTTP surface: POST /score computes batch pair scores, GET /health reports
 * readiness and the default model tag. The service is stateless per request;
 * the embedder warms up once at startup.
 */

import { createServer, type IncomingMessage, type Server, type ServerResponse } from "node:http";
import { pathToFileURL } from "node:url";

import { DEFAULT_MODEL_TAG, contextualVectors, tokenize } from "./embedding.js";
import { ProtocolError, parseScoreRequest } from "./protocol.js";
import { scoreBatch } from "./scorer.js";

const MAX_BODY_BYTES = 8 * 1024 * 1024;

export class ScorerService {
  readonly modelTag: string;
  ready = false;

  constructor(modelTag: string = DEFAULT_MODEL_TAG) {
    this.modelTag = modelTag;
  }

  /** Warm the embedder; health reports ready only afterwards. */
  load(): void {
    contextualVectors(this.modelTag, tokenize("warm up the embedder"));
    this.ready = true;
  }

  health(): { status: string; model_tag: string } {
    return {
      status: this.ready ? "ready" : "loading",
      model_tag: this.modelTag,
    };
  }

  async handle(request: IncomingMessage, response: ServerResponse): Promise<void> {
    try {
      if (request.method === "GET" && request.url === "/health") {
        sendJson(response, this.ready ? 200 : 503, this.health());
        return;
      }
      if (request.method === "POST" && request.url === "/score") {
        if (!this.ready) {
          sendJson(response, 503, { error: "model is still loading" });
          return;
        }
        const body = await readJsonBody(request);
        const parsed = parseScoreRequest(body);
        const scores = scoreBatch(parsed.candidates, parsed.references, {
          modelTag: parsed.model_tag ?? this.modelTag,
          idf: parsed.idf ?? false,
        });
        sendJson(response, 200, scores);
        return;
      }
      sendJson(response, 404, { error: `no route for ${request.method} ${request.url}` });
    } catch (error) {
      if (error instanceof ProtocolError) {
        sendJson(response, error.status, { error: error.message });
      } else if (error instanceof SyntaxError) {
        sendJson(response, 400, { error: "request body is not valid JSON" });
      } else {
        sendJson(response, 500, { error: "internal error" });
      }
    }
  }
}

function sendJson(response: ServerResponse, status: number, payload: unknown): void {
  const body = JSON.stringify(payload);
  response.writeHead(status, {
    "content-type": "application/json",
    "content-length": Buffer.byteLength(body),
  });
  response.end(body);
}

async function readJsonBody(request: IncomingMessage): Promise<unknown> {
  const chunks: Buffer[] = [];
  let total = 0;
  for await (const chunk of request) {
    total += (chunk as Buffer).length;
    if (total > MAX_BODY_BYTES) {
      throw new ProtocolError("request body too large", 413);
    }
    chunks.push(chunk as Buffer);
  }
  return JSON.parse(Buffer.concat(chunks).toString("utf-8"));
}

export function createApp(service: ScorerService = new ScorerService()): Server {
  return createServer((request, response) => {
    void service.handle(request, response);
  });
}

function parsePort(argv: string[]): number {
  const flag = argv.indexOf("--port");
  if (flag !== -1 && argv[flag + 1] !== undefined) {
    return Number.parseInt(argv[flag + 1]!, 10);
  }
  if (process.env.PORT !== undefined) {
    return Number.parseInt(process.env.PORT, 10);
  }
  return 8876;
}

function main(): void {
  const port = parsePort(process.argv.slice(2));
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    console.error(`invalid port: ${port}`);
    process.exitCode = 2;
    return;
  }
  const service = new ScorerService();
  service.load();
  const server = createApp(service);
  server.listen(port, "127.0.0.1", () => {
    const address = server.address();
    const bound = typeof address === "object" && address !== null ? address.port : port;
    console.log(`contextual scorer listening on 127.0.0.1:${bound} (${service.modelTag})`);
  });
  for (const signal of ["SIGINT", "SIGTERM"] as const) {
    process.on(signal, () => server.close(() => process.exit(0)));
  }
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  main();
}
