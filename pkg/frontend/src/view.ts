/** Framework-less DOM view for the chat client.
 *
 * Model replies are rendered with textContent set to the exact string
 * from the server payload — no trimming, escaping or markdown pass —
 * so the displayed text is byte-identical to the API response.
 */

import type { ChatStore } from "./session";
import { groupStyles } from "./styles";
import type { Catalog, ModelKind } from "./types";

export class ChatView {
  private readonly root: HTMLElement;
  private readonly store: ChatStore;

  readonly imageSelect: HTMLSelectElement;
  readonly styleSelect: HTMLSelectElement;
  readonly kindSelect: HTMLSelectElement;
  readonly startButton: HTMLButtonElement;
  readonly messageList: HTMLUListElement;
  readonly input: HTMLInputElement;
  readonly sendButton: HTMLButtonElement;
  readonly exportButton: HTMLButtonElement;
  readonly status: HTMLParagraphElement;

  constructor(root: HTMLElement, store: ChatStore, catalog: Catalog) {
    this.root = root;
    this.store = store;
    const doc = root.ownerDocument;

    this.imageSelect = doc.createElement("select");
    this.imageSelect.className = "image-picker";
    for (const imageId of catalog.images) {
      const option = doc.createElement("option");
      option.value = imageId;
      option.textContent = imageId;
      this.imageSelect.appendChild(option);
    }

    this.styleSelect = doc.createElement("select");
    this.styleSelect.className = "style-picker";
    for (const group of groupStyles(catalog.styles)) {
      const optgroup = doc.createElement("optgroup");
      optgroup.label = group.class;
      for (const name of group.styles) {
        const option = doc.createElement("option");
        option.value = name;
        option.textContent = name;
        optgroup.appendChild(option);
      }
      this.styleSelect.appendChild(optgroup);
    }

    this.kindSelect = doc.createElement("select");
    this.kindSelect.className = "model-kind";
    for (const kind of ["retrieval", "generative"]) {
      const option = doc.createElement("option");
      option.value = kind;
      option.textContent = kind;
      this.kindSelect.appendChild(option);
    }

    this.startButton = doc.createElement("button");
    this.startButton.textContent = "Start chat";
    this.startButton.addEventListener("click", () => {
      void this.onStart();
    });

    this.messageList = doc.createElement("ul");
    this.messageList.className = "messages";

    this.input = doc.createElement("input");
    this.input.type = "text";
    this.input.placeholder = "Say something about the image…";
    this.input.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).key === "Enter") void this.onSend();
    });

    this.sendButton = doc.createElement("button");
    this.sendButton.textContent = "Send";
    this.sendButton.addEventListener("click", () => {
      void this.onSend();
    });

    this.exportButton = doc.createElement("button");
    this.exportButton.textContent = "Export transcript";
    this.exportButton.addEventListener("click", () => {
      void this.onExport();
    });

    this.status = doc.createElement("p");
    this.status.className = "status";

    const controls = doc.createElement("div");
    controls.className = "controls";
    controls.append(
      this.imageSelect,
      this.styleSelect,
      this.kindSelect,
      this.startButton,
      this.exportButton,
    );
    const composer = doc.createElement("div");
    composer.className = "composer";
    composer.append(this.input, this.sendButton);
    root.append(controls, this.messageList, composer, this.status);

    store.subscribe(() => this.render());
    this.render();
  }

  private async onStart(): Promise<void> {
    try {
      await this.store.start(
        this.imageSelect.value,
        this.styleSelect.value,
        this.kindSelect.value as ModelKind,
      );
    } catch {
      // store.lastError is rendered below
    }
  }

  private async onSend(): Promise<void> {
    const text = this.input.value;
    if (!text || !this.store.canSend) return;
    this.input.value = "";
    try {
      await this.store.send(text);
    } catch {
      this.input.value = text; // let the user retry the failed turn
    }
  }

  private async onExport(): Promise<void> {
    const exported = await this.store.fetchServerExport();
    const doc = this.root.ownerDocument;
    const blob = new Blob([JSON.stringify(exported, null, 2)], {
      type: "application/json",
    });
    const link = doc.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `${exported.session_id}.json`;
    link.click();
    URL.revokeObjectURL(link.href);
  }

  render(): void {
    const doc = this.root.ownerDocument;
    this.messageList.replaceChildren();
    for (const message of this.store.messages) {
      const item = doc.createElement("li");
      item.className = `message ${message.speaker}`;
      item.textContent = message.text;
      this.messageList.appendChild(item);
    }
    this.sendButton.disabled = !this.store.canSend;
    this.input.disabled = !this.store.canSend;
    this.exportButton.disabled =
      this.store.sessionId === null || this.store.pending;
    this.startButton.disabled = this.store.pending;
    this.status.textContent = this.store.lastError
      ? `error: ${this.store.lastError}`
      : this.store.pending
        ? "waiting for reply…"
        : "";
  }
}
