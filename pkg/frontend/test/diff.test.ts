import { describe, expect, it } from "vitest";

import { changedChips, tokenDiff, tokenize } from "../src/diff.js";

describe("tokenize", () => {
  it("lowercases and splits on runs of whitespace", () => {
    expect(tokenize("The Bird  has\ta RED head")).toEqual([
      "the", "bird", "has", "a", "red", "head",
    ]);
  });

  it("drops empty tokens from leading and trailing space", () => {
    expect(tokenize("  red head ")).toEqual(["red", "head"]);
  });
});

describe("tokenDiff", () => {
  const original = tokenize("the bird has a red head and blue belly and green wings");

  it("marks every chip same when nothing changed", () => {
    const chips = tokenDiff(original, original);
    expect(chips).toHaveLength(original.length);
    expect(changedChips(chips)).toHaveLength(0);
  });

  it("marks exactly one chip for a one-word color edit", () => {
    const edited = original.slice();
    edited[4] = "yellow";
    const changed = changedChips(tokenDiff(original, edited));
    expect(changed).toHaveLength(1);
    expect(changed[0]).toMatchObject({
      index: 4,
      word: "yellow",
      status: "changed",
      originalWord: "red",
    });
  });

  it("marks trailing words added or removed on length drift", () => {
    const longer = [...original, "extra"];
    const added = tokenDiff(original, longer);
    expect(added[original.length]).toMatchObject({ status: "added", word: "extra" });

    const shorter = original.slice(0, -1);
    const removed = tokenDiff(original, shorter);
    expect(removed[original.length - 1]).toMatchObject({ status: "removed", word: "wings" });
  });
});
