/** Token-level diff between the original caption and the current one.
 *
 * Captions are compared positionally: the model's attention artifacts
 * are indexed by position, so a chip's identity is its index, and the
 * diff must say, per index, whether the word changed. Length drift
 * (advanced free-text mode) marks trailing extras/removals.
 */

export type ChipStatus = "same" | "changed" | "added" | "removed";

/** Mirrors the server's tokenizer: lowercase, split on whitespace. */
export function tokenize(caption: string): string[] {
  return caption.toLowerCase().split(/\s+/).filter((w) => w.length > 0);
}

export interface Chip {
  index: number;
  word: string;
  status: ChipStatus;
  /** Original word at this position when status is changed/removed. */
  originalWord?: string;
}

export function tokenDiff(original: string[], current: string[]): Chip[] {
  const chips: Chip[] = [];
  const n = Math.max(original.length, current.length);
  for (let i = 0; i < n; i++) {
    const was = original[i];
    const now = current[i];
    if (was !== undefined && now !== undefined) {
      chips.push(
        was === now
          ? { index: i, word: now, status: "same" }
          : { index: i, word: now, status: "changed", originalWord: was },
      );
    } else if (now !== undefined) {
      chips.push({ index: i, word: now, status: "added" });
    } else if (was !== undefined) {
      chips.push({ index: i, word: was, status: "removed", originalWord: was });
    }
  }
  return chips;
}

export function changedChips(chips: Chip[]): Chip[] {
  return chips.filter((c) => c.status !== "same");
}
