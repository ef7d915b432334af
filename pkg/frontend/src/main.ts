import { ApiClient } from "./api.js";
import { SessionStore } from "./state.js";
import { mountView } from "./view.js";

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const store = new SessionStore(api);
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  let vocab: string[] = [];
  try {
    vocab = (await api.vocab()).tokens.filter((t) => !t.startsWith("<"));
  } catch {
    // vocab endpoint needs a model; chips degrade to text-only selects
  }
  mountView(root, store, vocab);
}

void boot();
