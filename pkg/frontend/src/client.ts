/**
 * HTTP client for the chat backend: POST the full history, read the
 * SSE response body, and surface each parsed event to a callback.
 */

import { SseParser } from "./events.js";
import type { StreamEvent } from "./events.js";
import type { SessionMessage } from "./session.js";

export interface ChatOptions {
  max_tokens?: number;
  temperature?: number;
}

export interface StreamChatOpts {
  options?: ChatOptions;
  signal?: AbortSignal;
}

/**
 * Send one chat turn and invoke `onEvent` for every server event, in
 * arrival order. Resolves once the stream closes; rejects on network
 * or HTTP-level failure.
 */
export async function streamChat(
  baseUrl: string,
  messages: SessionMessage[],
  onEvent: (event: StreamEvent) => void,
  opts: StreamChatOpts = {},
): Promise<void> {
  const response = await fetch(`${baseUrl}/v1/chat`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({
      messages: messages.map((m) => ({ role: m.role, content: m.content })),
      options: opts.options ?? {},
    }),
    signal: opts.signal ?? null,
  });
  if (!response.ok) {
    throw new Error(`chat request failed: HTTP ${response.status}`);
  }
  if (!response.body) {
    throw new Error("chat request failed: empty response body");
  }

  const reader = response.body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseParser();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) {
      break;
    }
    for (const event of parser.push(decoder.decode(value, { stream: true }))) {
      onEvent(event);
    }
  }
  for (const event of parser.push(decoder.decode())) {
    onEvent(event);
  }
  for (const event of parser.end()) {
    onEvent(event);
  }
}

/** True when GET /health answers ok. */
export async function checkHealth(baseUrl: string): Promise<boolean> {
  try {
    const response = await fetch(`${baseUrl}/health`);
    if (!response.ok) {
      return false;
    }
    const body = (await response.json()) as { status?: string };
    return body.status === "ok";
  } catch {
    return false;
  }
}
