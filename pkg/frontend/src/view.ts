/** DOM rendering. One render() pass redraws everything from state;
 * no virtual DOM, the page is small enough to rebuild chip and pane
 * contents wholesale on every store emit.
 */

import { tokenDiff } from "./diff.js";
import { decodePgmBase64, grayToDataUri, ppmToDataUri } from "./pgm.js";
import { SessionStore, UiSessionState } from "./state.js";

const PANE_SCALE = 6;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function imageUri(b64: string, format: string): string {
  if (format === "png") return `data:image/png;base64,${b64}`;
  if (format === "ppm") return ppmToDataUri(b64, PANE_SCALE);
  throw new Error(`unknown image format ${format}`);
}

/** Heatmaps need a canvas; when one is unavailable the map is skipped. */
function tryMapUri(b64: string, tint: boolean): string | null {
  try {
    return grayToDataUri(decodePgmBase64(b64), PANE_SCALE, tint);
  } catch {
    return null;
  }
}

export interface ViewHooks {
  /** Exposed for tests: chips as last rendered, in order. */
  chipNodes(): HTMLElement[];
}

export function mountView(root: HTMLElement, store: SessionStore, vocab: string[]): ViewHooks {
  root.innerHTML = "";

  const banner = el("div", "banner hidden");
  const bannerText = el("span");
  const retryBtn = el("button", "", "retry");
  retryBtn.addEventListener("click", () => void store.retry());
  banner.append(bannerText, retryBtn);

  const startForm = el("form", "start-form");
  const startInput = el("input") as HTMLInputElement;
  startInput.placeholder = "the bird has a red head and blue belly and green wings";
  startInput.size = 60;
  const seedInput = el("input") as HTMLInputElement;
  seedInput.placeholder = "seed";
  seedInput.size = 6;
  const startBtn = el("button", "", "start session");
  startForm.append(startInput, seedInput, startBtn);
  startForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const seed = seedInput.value.trim() === "" ? undefined : Number(seedInput.value);
    void store.startSession(startInput.value, seed);
  });

  const workspace = el("section", "workspace hidden");
  const panes = el("div", "panes");
  const originalFig = el("figure");
  const originalImg = el("img", "pane") as HTMLImageElement;
  originalFig.append(originalImg, el("figcaption", "", "original"));
  const currentFig = el("figure", "current-fig");
  const currentImg = el("img", "pane") as HTMLImageElement;
  const overlayImg = el("img", "overlay hidden") as HTMLImageElement;
  currentFig.append(currentImg, overlayImg, el("figcaption", "", "current"));
  const diffFig = el("figure");
  const diffImg = el("img", "pane") as HTMLImageElement;
  diffFig.append(diffImg, el("figcaption", "", "change map"));
  panes.append(originalFig, currentFig, diffFig);

  const metrics = el("div", "metrics");
  const chipRow = el("div", "chips");
  const actions = el("div", "actions");
  const restoreBtn = el("button", "", "restore original");
  restoreBtn.addEventListener("click", () => store.restoreOriginal());
  const advancedToggle = el("button", "", "advanced");
  const advancedForm = el("form", "advanced hidden");
  const advancedInput = el("input") as HTMLInputElement;
  advancedInput.size = 60;
  const advancedSubmit = el("button", "", "submit caption");
  advancedForm.append(advancedInput, advancedSubmit);
  advancedToggle.addEventListener("click", () => advancedForm.classList.toggle("hidden"));
  advancedForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    store.requestEdit(advancedInput.value);
  });
  actions.append(restoreBtn, advancedToggle);

  workspace.append(panes, metrics, chipRow, actions, advancedForm);
  root.append(banner, startForm, workspace);

  let chips: HTMLElement[] = [];

  function renderChips(state: UiSessionState): void {
    chipRow.innerHTML = "";
    chips = [];
    const shown = state.draftCaption ?? state.currentCaption;
    for (const chip of tokenDiff(state.originalCaption, shown)) {
      const node = el("span", `chip ${chip.status}`);
      const label = el("span", "word", chip.word);
      label.title = chip.originalWord ? `was: ${chip.originalWord}` : "toggle attention";
      label.addEventListener("click", () => store.toggleOverlay(chip.index));
      node.append(label);
      if (state.oovTokens.includes(chip.word)) {
        node.classList.add("oov");
        node.append(el("span", "oov-marker", "not in vocabulary"));
      }
      if (state.activeOverlay === chip.index) node.classList.add("overlaying");
      const select = el("select") as HTMLSelectElement;
      for (const token of vocab) {
        const opt = el("option", "", token) as HTMLOptionElement;
        opt.value = token;
        if (token === chip.word) opt.selected = true;
        select.append(opt);
      }
      select.addEventListener("change", () => {
        const words = shown.slice();
        words[chip.index] = select.value;
        store.requestEdit(words.join(" "));
      });
      node.append(select);
      chipRow.append(node);
      chips.push(node);
    }
  }

  function renderOverlay(state: UiSessionState): void {
    overlayImg.classList.add("hidden");
    if (state.activeOverlay === null) return;
    const word = state.currentCaption[state.activeOverlay];
    const map = state.attention[`${state.activeOverlay}:${word}`];
    if (!map) return;
    const uri = tryMapUri(map, true);
    if (uri === null) return;
    overlayImg.src = uri;
    overlayImg.classList.remove("hidden");
  }

  function render(state: UiSessionState): void {
    banner.classList.toggle("hidden", state.banner === null);
    bannerText.textContent = state.banner ?? "";
    workspace.classList.toggle("hidden", state.sessionId === null);
    if (state.sessionId === null) return;
    if (state.originalImage) originalImg.src = imageUri(state.originalImage, state.imageFormat);
    if (state.currentImage) currentImg.src = imageUri(state.currentImage, state.imageFormat);
    const diffUri = state.diffMap === null ? null : tryMapUri(state.diffMap, false);
    if (diffUri !== null) {
      diffImg.src = diffUri;
      diffFig.classList.remove("hidden");
    } else {
      diffFig.classList.add("hidden");
    }
    metrics.textContent =
      state.l2Full === null
        ? `edits: ${state.edits}`
        : `l2_full: ${state.l2Full.toExponential(3)} · edits: ${state.edits}`;
    renderChips(state);
    renderOverlay(state);
    advancedInput.value = (state.draftCaption ?? state.currentCaption).join(" ");
  }

  store.subscribe(render);
  render(store.state);
  return { chipNodes: () => chips };
}
