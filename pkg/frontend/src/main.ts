/**
 * Browser entry point: wire the compose form to the session state
 * machine and repaint the four display slots as events stream in.
 */

import { checkHealth, streamChat } from "./client.js";
import { ChatSession } from "./session.js";
import { UiRenderer } from "./ui.js";

function requireElement(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing #${id} in index.html`);
  }
  return el;
}

function main(): void {
  // Served from the backend's /ui mount, so the API is same-origin.
  const baseUrl = "";
  const session = new ChatSession();
  const renderer = new UiRenderer({
    transcript: requireElement("transcript"),
    citationPanel: requireElement("citation-panel"),
    toolPanel: requireElement("tool-panel"),
    statusBar: requireElement("status-bar"),
  });

  const form = requireElement("compose") as HTMLFormElement;
  const input = requireElement("message-input") as HTMLTextAreaElement;
  const sendButton = requireElement("send-button") as HTMLButtonElement;

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void sendTurn();
  });
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter" && !ev.shiftKey) {
      ev.preventDefault();
      void sendTurn();
    }
  });

  async function sendTurn(): Promise<void> {
    const history = session.beginTurn(input.value);
    renderer.renderAll(session);
    if (history === null) {
      return;
    }
    input.value = "";
    sendButton.disabled = true;
    try {
      await streamChat(baseUrl, history, (event) => {
        if (session.apply(event)) {
          renderer.renderAll(session);
        }
      });
      if (session.inFlight) {
        session.failTransport("stream ended before done");
      }
    } catch (err) {
      session.failTransport(err instanceof Error ? err.message : String(err));
    } finally {
      sendButton.disabled = false;
      renderer.renderAll(session);
      input.focus();
    }
  }

  void checkHealth(baseUrl).then((ok) => {
    if (!session.inFlight && !session.statusMessage) {
      session.statusMessage = ok
        ? "Connected - ask away."
        : "Backend unreachable - is the server running?";
      renderer.renderStatus(session);
    }
  });
  renderer.renderAll(session);
}

main();
