/**
 * Wire types for the backend's chat stream, plus an incremental SSE
 * parser. Frames look like:
 *
 *   event: token
 *   data: {"seq":4,"text":"hi"}
 *
 * separated by a blank line. Every data payload carries a seq number;
 * the parser only validates shape, ordering is the session's job.
 */

export const EVENT_KINDS = [
  "token",
  "tool_call",
  "tool_result",
  "chunks",
  "timing",
  "error",
  "done",
] as const;

export type EventKind = (typeof EVENT_KINDS)[number];

export interface WireChunk {
  id: string;
  source_id: string;
  uri: string;
  heading_path: string[];
  body: string;
  token_count: number;
  bm25: number;
  cosine: number;
  fused: number;
  rerank: number | null;
}

export interface TokenPayload {
  seq: number;
  text: string;
}

export interface ToolCallPayload {
  seq: number;
  call_id: string;
  endpoint_name: string;
  tool_name: string;
  arguments: Record<string, unknown>;
}

export interface ToolResultPayload {
  seq: number;
  call_id: string;
  ok: boolean;
  content_text: string;
  raised_at: string;
}

export interface ChunksPayload {
  seq: number;
  chunks: WireChunk[];
}

export interface TimingPayload {
  seq: number;
  retrieve_ms: number;
  rerank_ms: number;
  tool_ms: number;
  generate_first_token_ms: number;
  total_ms: number;
}

export interface ErrorPayload {
  seq: number;
  message: string;
  recoverable: boolean;
}

export interface DonePayload {
  seq: number;
}

export type StreamEvent =
  | { kind: "token"; data: TokenPayload }
  | { kind: "tool_call"; data: ToolCallPayload }
  | { kind: "tool_result"; data: ToolResultPayload }
  | { kind: "chunks"; data: ChunksPayload }
  | { kind: "timing"; data: TimingPayload }
  | { kind: "error"; data: ErrorPayload }
  | { kind: "done"; data: DonePayload };

/** Where each event kind lands on screen. */
export type DisplaySlot = "transcript" | "citation_panel" | "tool_panel" | "status_bar";

export function slotFor(kind: EventKind): DisplaySlot {
  switch (kind) {
    case "token":
    case "error":
      return "transcript";
    case "chunks":
      return "citation_panel";
    case "tool_call":
    case "tool_result":
      return "tool_panel";
    case "timing":
    case "done":
      return "status_bar";
  }
}

function isKnownKind(value: string): value is EventKind {
  return (EVENT_KINDS as readonly string[]).includes(value);
}

function parseFrame(frame: string): StreamEvent | null {
  let kind = "message";
  const dataLines: string[] = [];
  for (const raw of frame.split(/\r?\n/)) {
    if (raw.startsWith("event:")) {
      kind = raw.slice(6).trim();
    } else if (raw.startsWith("data:")) {
      dataLines.push(raw.slice(5).trimStart());
    }
  }
  if (!isKnownKind(kind) || dataLines.length === 0) return null;

  let data: unknown;
  try {
    data = JSON.parse(dataLines.join("\n"));
  } catch {
    return null;
  }
  if (
    typeof data !== "object" ||
    data === null ||
    typeof (data as { seq?: unknown }).seq !== "number"
  ) {
    return null;
  }
  return { kind, data } as StreamEvent;
}

/**
 * Reassembles SSE frames from arbitrarily sliced network reads.
 * Malformed frames are dropped, never thrown.
 */
export class SseParser {
  private buffer = "";

  push(text: string): StreamEvent[] {
    this.buffer += text;
    const frames = this.buffer.split(/\r?\n\r?\n/);
    this.buffer = frames.pop() ?? "";
    return frames
      .map(parseFrame)
      .filter((event): event is StreamEvent => event !== null);
  }

  /** Flush whatever is left once the stream closes. */
  end(): StreamEvent[] {
    const rest = this.buffer;
    this.buffer = "";
    if (!rest.trim()) return [];
    const event = parseFrame(rest);
    return event ? [event] : [];
  }
}
