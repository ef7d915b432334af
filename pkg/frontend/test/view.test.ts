import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionStore } from "../src/state.js";
import { mountView } from "../src/view.js";
import { installMockService, VOCAB } from "./mock_service.js";

const CAPTION = "the bird has a red head and blue belly and green wings";
const EDITED = "the bird has a yellow head and blue belly and green wings";

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

describe("mountView", () => {
  let mock: ReturnType<typeof installMockService>;
  let store: SessionStore;
  let root: HTMLElement;
  let hooks: ReturnType<typeof mountView>;

  beforeEach(() => {
    mock = installMockService();
    store = new SessionStore(new ApiClient(""));
    document.body.innerHTML = '<div id="app"></div>';
    root = document.getElementById("app")!;
    hooks = mountView(root, store, VOCAB.filter((t) => !t.startsWith("<")));
  });

  function panes(): { original: HTMLImageElement; current: HTMLImageElement } {
    const imgs = root.querySelectorAll<HTMLImageElement>("img.pane");
    return { original: imgs[0]!, current: imgs[1]! };
  }

  it("starts with identical panes and an empty diff chip set", async () => {
    await store.startSession(CAPTION);
    const { original, current } = panes();
    expect(original.src).toBe(current.src);
    expect(root.querySelectorAll(".chip").length).toBe(CAPTION.split(" ").length);
    expect(root.querySelectorAll(".chip.changed").length).toBe(0);
    expect(root.querySelector(".banner")!.classList.contains("hidden")).toBe(true);
  });

  it("highlights exactly one chip after a one-word edit", async () => {
    await store.startSession(CAPTION);
    store.requestEdit(EDITED);
    await flush();
    const changed = root.querySelectorAll(".chip.changed");
    expect(changed.length).toBe(1);
    expect(changed[0]!.querySelector(".word")!.textContent).toBe("yellow");
    const { original, current } = panes();
    expect(original.src).not.toBe(current.src);
  });

  it("restoring the original caption makes the panes byte-equal again", async () => {
    await store.startSession(CAPTION);
    store.requestEdit(EDITED);
    await flush();
    store.restoreOriginal();
    await flush();
    const { original, current } = panes();
    expect(current.src).toBe(original.src);
    expect(root.querySelectorAll(".chip.changed").length).toBe(0);
  });

  it("marks the offending chip inline when the server rejects a token", async () => {
    await store.startSession(CAPTION);
    store.requestEdit("the bird has a vermilion head and blue belly and green wings");
    await flush();
    const oov = root.querySelectorAll(".chip.oov");
    expect(oov.length).toBe(1);
    expect(oov[0]!.querySelector(".word")!.textContent).toBe("vermilion");
    expect(oov[0]!.querySelector(".oov-marker")!.textContent).toMatch(/vocabulary/);
    expect(root.querySelector(".banner")!.classList.contains("hidden")).toBe(true);
  });

  it("shows the retry banner on network failure and keeps the panes", async () => {
    await store.startSession(CAPTION);
    const before = panes().current.src;
    mock.offline = true;
    store.requestEdit(EDITED);
    await flush();
    expect(root.querySelector(".banner")!.classList.contains("hidden")).toBe(false);
    expect(panes().current.src).toBe(before);

    mock.offline = false;
    (root.querySelector(".banner button") as HTMLButtonElement).click();
    await flush();
    expect(root.querySelector(".banner")!.classList.contains("hidden")).toBe(true);
    expect(root.querySelectorAll(".chip.changed").length).toBe(1);
  });

  it("submits an edit when a chip's dropdown changes", async () => {
    await store.startSession(CAPTION);
    const chip = hooks.chipNodes()[4]!;
    const select = chip.querySelector("select")!;
    select.value = "yellow";
    select.dispatchEvent(new Event("change"));
    await flush();
    expect(mock.calls).toContain(`edit:${EDITED}`);
  });
});
