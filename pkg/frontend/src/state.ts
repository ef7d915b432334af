/** Session store: holds UI state, serializes edits, survives failures.
 *
 * Concurrency contract: one request in flight per session; further
 * edits queue client-side in submission order. The original image is
 * written once at session start and never reassigned, and the latent
 * z never leaves the server, so caption text is the only thing an
 * edit can change.
 */

import { ApiClient, ApiError } from "./api.js";
import { tokenize } from "./diff.js";

export interface UiSessionState {
  sessionId: string | null;
  originalCaption: string[];
  currentCaption: string[];
  /** Base64 image payloads exactly as the API returned them. */
  originalImage: string | null;
  currentImage: string | null;
  imageFormat: string;
  /** PGM map of squared pixel distance to the original, from the last edit. */
  diffMap: string | null;
  /** Per-word heatmaps from the last edit, keyed "index:word". */
  attention: Record<string, string>;
  /** Metric readouts come verbatim from API responses. */
  l2Full: number | null;
  edits: number;
  /** Tokens the server rejected; chips carrying them show the marker. */
  oovTokens: string[];
  /** Last submitted caption, kept while unconfirmed so rejected words stay visible. */
  draftCaption: string[] | null;
  /** Non-null shows the retry banner; state is otherwise untouched. */
  banner: string | null;
  busy: boolean;
  /** Chip index whose attention overlay is showing, if any. */
  activeOverlay: number | null;
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    originalCaption: [],
    currentCaption: [],
    originalImage: null,
    currentImage: null,
    imageFormat: "png",
    diffMap: null,
    attention: {},
    l2Full: null,
    edits: 0,
    oovTokens: [],
    draftCaption: null,
    banner: null,
    busy: false,
    activeOverlay: null,
  };
}

type Listener = (state: UiSessionState) => void;

export class SessionStore {
  state: UiSessionState = initialState();
  private listeners = new Set<Listener>();
  private queue: string[] = [];
  private lastFailed: (() => Promise<void>) | null = null;

  constructor(private api: ApiClient) {}

  subscribe(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(patch: Partial<UiSessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  async startSession(caption: string, seed?: number): Promise<void> {
    this.emit({ ...initialState(), busy: true });
    const attempt = async () => {
      const res = await this.api.createSession(caption, seed);
      this.emit({
        sessionId: res.session_id,
        originalCaption: res.caption,
        currentCaption: res.caption,
        originalImage: res.image_b64,
        currentImage: res.image_b64,
        imageFormat: res.format,
        busy: false,
      });
    };
    await this.run(attempt);
  }

  /** Submits an edit, or queues it when one is already in flight. */
  requestEdit(caption: string): void {
    if (this.state.busy) {
      this.queue.push(caption);
      return;
    }
    void this.sendEdit(caption);
  }

  restoreOriginal(): void {
    this.requestEdit(this.state.originalCaption.join(" "));
  }

  toggleOverlay(index: number): void {
    this.emit({ activeOverlay: this.state.activeOverlay === index ? null : index });
  }

  async retry(): Promise<void> {
    const failed = this.lastFailed;
    this.lastFailed = null;
    this.emit({ banner: null, busy: failed !== null });
    if (failed) {
      await this.run(failed);
      this.drainQueue();
    }
  }

  private async sendEdit(caption: string): Promise<void> {
    const sid = this.state.sessionId;
    if (!sid) return;
    this.emit({ busy: true, draftCaption: tokenize(caption) });
    await this.run(async () => {
      const res = await this.api.editSession(sid, caption);
      this.emit({
        currentCaption: res.caption,
        currentImage: res.image_b64,
        imageFormat: res.format,
        diffMap: res.diff_b64,
        attention: res.attention,
        l2Full: res.l2_full,
        edits: this.state.edits + 1,
        oovTokens: [],
        draftCaption: null,
        busy: false,
      });
    });
    this.drainQueue();
  }

  private drainQueue(): void {
    if (this.state.banner !== null) return; // hold the queue while retry is offered
    const next = this.queue.shift();
    if (next !== undefined) void this.sendEdit(next);
  }

  private async run(attempt: () => Promise<void>): Promise<void> {
    try {
      await attempt();
      this.lastFailed = null;
    } catch (err) {
      if (err instanceof ApiError && err.status === 400 && err.tokens.length > 0) {
        this.emit({ oovTokens: err.tokens, busy: false });
      } else if (err instanceof ApiError) {
        this.emit({ banner: err.message, busy: false });
      } else {
        this.lastFailed = attempt;
        this.emit({ banner: "network error; your edit was kept", busy: false });
      }
    }
  }
}
