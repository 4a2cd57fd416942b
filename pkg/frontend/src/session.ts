/**
 * Chat session state, independent of the DOM.
 *
 * Invariants enforced here:
 *  - at most one in-flight request; sends while streaming are rejected
 *  - every request carries the full message history
 *  - events apply strictly in seq order; anything else is discarded
 *  - the frozen assistant turn is exactly the concatenated token texts
 *  - the citation list is the chunks payload verbatim, unfiltered
 */

import type {
  ChunksPayload,
  ErrorPayload,
  StreamEvent,
  TimingPayload,
  ToolCallPayload,
  ToolResultPayload,
  WireChunk,
} from "./events.js";

export interface SessionMessage {
  role: "user" | "assistant";
  content: string;
}

export interface ToolTraceRow {
  call: ToolCallPayload;
  result: ToolResultPayload | null;
}

export interface TranscriptError {
  message: string;
  recoverable: boolean;
}

export type SessionLogger = (message: string) => void;

export class ChatSession {
  readonly messages: SessionMessage[] = [];
  inFlight = false;
  /** Growing assistant bubble for the current turn. */
  streamingText = "";
  lastCitations: WireChunk[] = [];
  toolTrace: ToolTraceRow[] = [];
  turnErrors: TranscriptError[] = [];
  lastTiming: TimingPayload | null = null;
  statusMessage = "";

  private expectedSeq = 0;
  private readonly log: SessionLogger;

  constructor(log: SessionLogger = (m) => console.warn(m)) {
    this.log = log;
  }

  /**
   * Start a turn: append the user message and hand back the full
   * history to send. Returns null (with a visible status) when a
   * stream is already running or the text is blank.
   */
  beginTurn(text: string): SessionMessage[] | null {
    if (this.inFlight) {
      this.statusMessage = "Still answering - wait for the current turn to finish.";
      return null;
    }
    if (!text.trim()) {
      this.statusMessage = "Type a message first.";
      return null;
    }
    this.messages.push({ role: "user", content: text });
    this.inFlight = true;
    this.streamingText = "";
    this.toolTrace = [];
    this.turnErrors = [];
    this.lastTiming = null;
    this.statusMessage = "Answering...";
    this.expectedSeq = 0;
    return [...this.messages];
  }

  /** Apply one stream event; false means it was discarded. */
  apply(event: StreamEvent): boolean {
    if (!this.inFlight) {
      this.log(`event after done discarded: ${event.kind} seq=${event.data.seq}`);
      return false;
    }
    if (event.data.seq !== this.expectedSeq) {
      this.log(
        `out-of-order event discarded: ${event.kind} seq=${event.data.seq}, expected ${this.expectedSeq}`,
      );
      return false;
    }
    this.expectedSeq += 1;

    switch (event.kind) {
      case "token":
        this.streamingText += event.data.text;
        break;
      case "chunks":
        this.applyChunks(event.data);
        break;
      case "tool_call":
        this.toolTrace.push({ call: event.data, result: null });
        break;
      case "tool_result":
        this.applyToolResult(event.data);
        break;
      case "error":
        this.applyError(event.data);
        break;
      case "timing":
        this.lastTiming = event.data;
        break;
      case "done":
        this.finishTurn();
        break;
    }
    return true;
  }

  /** Transport broke before done: surface it and unlock the session. */
  failTransport(message: string): void {
    if (this.streamingText) {
      this.messages.push({ role: "assistant", content: this.streamingText });
      this.streamingText = "";
    }
    this.inFlight = false;
    this.statusMessage = `Connection lost: ${message}`;
  }

  private applyChunks(payload: ChunksPayload): void {
    // Verbatim copy - the panel must show exactly what the backend cited.
    this.lastCitations = payload.chunks;
  }

  private applyToolResult(payload: ToolResultPayload): void {
    const row = this.toolTrace.find(
      (r) => r.call.call_id === payload.call_id && r.result === null,
    );
    if (row) {
      row.result = payload;
    } else {
      this.log(`tool_result without a matching call: ${payload.call_id}`);
    }
  }

  private applyError(payload: ErrorPayload): void {
    this.turnErrors.push({
      message: payload.message,
      recoverable: payload.recoverable,
    });
  }

  private finishTurn(): void {
    this.messages.push({ role: "assistant", content: this.streamingText });
    this.streamingText = "";
    this.inFlight = false;
    this.statusMessage = this.lastTiming
      ? `Done in ${this.lastTiming.total_ms.toFixed(0)} ms`
      : "Done";
  }
}
