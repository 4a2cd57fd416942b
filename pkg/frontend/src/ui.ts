/**
 * DOM rendering for the four display slots: transcript, citation
 * panel, tool panel, and status bar. Framework-free; each render
 * redraws a slot from session state.
 */

import type { WireChunk } from "./events.js";
import type { ChatSession, ToolTraceRow } from "./session.js";

export interface UiSlots {
  transcript: HTMLElement;
  citationPanel: HTMLElement;
  toolPanel: HTMLElement;
  statusBar: HTMLElement;
}

export class UiRenderer {
  private readonly slots: UiSlots;
  /** Chunk ids whose full body is currently shown. */
  private readonly expanded = new Set<string>();

  constructor(slots: UiSlots) {
    this.slots = slots;
  }

  renderAll(session: ChatSession): void {
    this.renderTranscript(session);
    this.renderCitations(session.lastCitations);
    this.renderToolTrace(session.toolTrace);
    this.renderStatus(session);
  }

  renderTranscript(session: ChatSession): void {
    const root = this.slots.transcript;
    root.replaceChildren();
    for (const message of session.messages) {
      root.appendChild(bubble(message.role, message.content));
    }
    for (const err of session.turnErrors) {
      const div = bubble("error", err.message);
      if (!err.recoverable) {
        div.classList.add("fatal");
      }
      root.appendChild(div);
    }
    if (session.inFlight) {
      const div = bubble("assistant", session.streamingText);
      div.classList.add("streaming");
      root.appendChild(div);
    }
    root.scrollTop = root.scrollHeight;
  }

  renderCitations(chunks: WireChunk[]): void {
    const root = this.slots.citationPanel;
    root.replaceChildren();
    if (chunks.length === 0) {
      root.appendChild(hint("No citations yet."));
      return;
    }
    chunks.forEach((chunk, i) => {
      root.appendChild(this.citationCard(chunk, i + 1));
    });
  }

  renderToolTrace(rows: ToolTraceRow[]): void {
    const root = this.slots.toolPanel;
    root.replaceChildren();
    if (rows.length === 0) {
      root.appendChild(hint("No tool calls this turn."));
      return;
    }
    for (const row of rows) {
      root.appendChild(toolRow(row));
    }
  }

  renderStatus(session: ChatSession): void {
    const root = this.slots.statusBar;
    root.textContent = session.statusMessage;
    root.classList.toggle("error", session.statusMessage.startsWith("Connection lost"));
  }

  /** One citation: a toggle button revealing the chunk body on demand. */
  private citationCard(chunk: WireChunk, rank: number): HTMLElement {
    const card = document.createElement("article");
    card.className = "citation";
    card.dataset["chunkId"] = chunk.id;

    const isOpen = this.expanded.has(chunk.id);
    const button = document.createElement("button");
    button.type = "button";
    button.className = "citation-toggle";
    button.setAttribute("aria-expanded", String(isOpen));
    button.textContent = `[${rank}] ${chunk.heading_path.join(" > ") || chunk.uri}`;

    const meta = document.createElement("p");
    meta.className = "citation-meta";
    meta.textContent = `${chunk.uri} - ${chunk.token_count} tokens - fused ${chunk.fused.toFixed(4)}`;

    const body = document.createElement("pre");
    body.className = "citation-body";
    body.textContent = chunk.body;
    body.hidden = !isOpen;

    button.addEventListener("click", () => {
      const open = this.expanded.has(chunk.id);
      if (open) {
        this.expanded.delete(chunk.id);
      } else {
        this.expanded.add(chunk.id);
      }
      button.setAttribute("aria-expanded", String(!open));
      body.hidden = open;
    });

    card.append(button, meta, body);
    return card;
  }
}

function bubble(role: string, content: string): HTMLElement {
  const div = document.createElement("div");
  div.className = `bubble ${role}`;
  const who = document.createElement("span");
  who.className = "role";
  who.textContent = role;
  const text = document.createElement("p");
  text.textContent = content;
  div.append(who, text);
  return div;
}

function toolRow(row: ToolTraceRow): HTMLElement {
  const div = document.createElement("div");
  div.className = "tool-row";
  const head = document.createElement("code");
  head.textContent = `${row.call.endpoint_name}/${row.call.tool_name}(${JSON.stringify(row.call.arguments)})`;
  div.appendChild(head);

  const result = document.createElement("p");
  result.className = "tool-result";
  if (row.result === null) {
    result.textContent = "running...";
    div.classList.add("pending");
  } else if (row.result.ok) {
    result.textContent = row.result.content_text;
  } else {
    result.textContent = `failed: ${row.result.content_text}`;
    div.classList.add("failed");
  }
  div.appendChild(result);
  return div;
}

function hint(text: string): HTMLElement {
  const p = document.createElement("p");
  p.className = "hint";
  p.textContent = text;
  return p;
}
