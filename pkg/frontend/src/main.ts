/** Browser entry point: fetch the catalog and mount the chat view. */

import { ApiClient } from "./api";
import { ChatStore } from "./session";
import { ChatView } from "./view";

export async function mount(
  root: HTMLElement,
  baseUrl = "",
): Promise<ChatView> {
  const api = new ApiClient(baseUrl);
  await api.health();
  const catalog = await api.catalog();
  const store = new ChatStore(api);
  return new ChatView(root, store, catalog);
}

declare const window: { document?: Document } | undefined;

if (typeof window !== "undefined" && window?.document) {
  const root = window.document.getElementById("app");
  if (root) {
    void mount(root).catch((err) => {
      root.textContent = `failed to reach the chat service: ${err}`;
    });
  }
}
