import { describe, expect, it } from "vitest";

import { canonicalJson } from "../src/serialize.js";
import type { TokensFile } from "../src/types.js";
import { validateTokensFile } from "../src/validate.js";

describe("canonicalJson", () => {
  it("sorts object keys and ends with a newline", () => {
    const text = canonicalJson({ b: 1, a: { d: 2, c: 3 } });
    expect(text).toBe('{\n "a": {\n  "c": 3,\n  "d": 2\n },\n "b": 1\n}\n');
  });

  it("is insensitive to key insertion order", () => {
    expect(canonicalJson({ x: 1, y: 2 })).toBe(canonicalJson({ y: 2, x: 1 }));
  });

  it("normalizes negative zero", () => {
    expect(canonicalJson({ v: -0 })).toContain('"v": 0');
  });

  it("rejects non-finite numbers", () => {
    expect(() => canonicalJson({ v: Number.NaN })).toThrow();
    expect(() => canonicalJson({ v: Number.POSITIVE_INFINITY })).toThrow();
  });
});

function wellFormed(): TokensFile {
  return {
    format_version: 1,
    doc_id: "doc",
    pages: [
      {
        page_no: 0,
        width: 100,
        height: 100,
        tokens: [
          { id: 0, text: "hi", bbox: [10, 10, 20, 20], block_id: 0, is_image: false },
          { id: 1, text: "", bbox: [30, 30, 40, 40], block_id: 1, is_image: true },
        ],
      },
    ],
  };
}

describe("validateTokensFile", () => {
  it("accepts a well-formed file", () => {
    expect(validateTokensFile(wellFormed())).toEqual([]);
  });

  it("flags an inverted box", () => {
    const file = wellFormed();
    file.pages[0].tokens[0].bbox = [20, 10, 10, 20];
    expect(validateTokensFile(file).join(" ")).toContain("x1 > x2");
  });

  it("flags a box past the page edge", () => {
    const file = wellFormed();
    file.pages[0].tokens[0].bbox = [10, 10, 102, 20];
    expect(validateTokensFile(file).join(" ")).toContain("outside page bounds");
  });

  it("tolerates a box within one point of the edge", () => {
    const file = wellFormed();
    file.pages[0].tokens[0].bbox = [10, 10, 100.9, 20];
    expect(validateTokensFile(file)).toEqual([]);
  });

  it("flags empty text on a non-image token", () => {
    const file = wellFormed();
    file.pages[0].tokens[0].text = "";
    expect(validateTokensFile(file).join(" ")).toContain("empty text");
  });

  it("flags a gap in token ids", () => {
    const file = wellFormed();
    file.pages[0].tokens[1].id = 2;
    expect(validateTokensFile(file).join(" ")).toContain("contiguous");
  });

  it("flags duplicate page numbers", () => {
    const file = wellFormed();
    file.pages.push({ ...wellFormed().pages[0] });
    expect(validateTokensFile(file).join(" ")).toContain("duplicate page_no");
  });

  it("flags a wrong format version", () => {
    const file = wellFormed();
    file.format_version = 7 as 1;
    expect(validateTokensFile(file).join(" ")).toContain("format_version");
  });

  it("flags a newline inside token text", () => {
    const file = wellFormed();
    file.pages[0].tokens[0].text = "a\nb";
    expect(validateTokensFile(file).join(" ")).toContain("newline");
  });
});
