import { basename } from "node:path";

import { getDocument, OPS } from "pdfjs-dist/legacy/build/pdf.mjs";

import type { Bbox, DumpOptions, PageDump, TokenDump, TokensFile } from "./types.js";
import { TOKENS_FORMAT_VERSION } from "./types.js";

/** a 6-number PDF matrix [a, b, c, d, e, f] */
type Matrix = [number, number, number, number, number, number];

const IDENTITY: Matrix = [1, 0, 0, 1, 0, 0];

/** Result of applying `m` after `n` (the usual PDF concatenation). */
function multiply(m: Matrix, n: Matrix): Matrix {
  return [
    m[0] * n[0] + m[1] * n[2],
    m[0] * n[1] + m[1] * n[3],
    m[2] * n[0] + m[3] * n[2],
    m[2] * n[1] + m[3] * n[3],
    m[4] * n[0] + m[5] * n[2] + n[4],
    m[4] * n[1] + m[5] * n[3] + n[5],
  ];
}

function apply(m: Matrix, x: number, y: number): [number, number] {
  return [m[0] * x + m[2] * y + m[4], m[1] * x + m[3] * y + m[5]];
}

const round2 = (v: number): number => Math.round(v * 100) / 100;

/** Clamp a box to the page so antialiasing-scale overshoot never fails validation. */
function clampBox(box: Bbox, width: number, height: number): Bbox {
  const [x1, y1, x2, y2] = box;
  return [
    round2(Math.min(Math.max(x1, 0), width)),
    round2(Math.min(Math.max(y1, 0), height)),
    round2(Math.min(Math.max(x2, 0), width)),
    round2(Math.min(Math.max(y2, 0), height)),
  ];
}

interface Word {
  text: string;
  x1: number;
  x2: number;
  baselineY: number;
  height: number;
}

/**
 * Split one extracted text run into words.
 *
 * The extractor reports a single box per run, so word boxes are carved out of
 * it proportionally to character counts.  That is approximate for
 * variable-width fonts but keeps every word inside the run's true box, which
 * is all downstream consumers rely on.
 */
function splitRun(str: string, x: number, width: number, baselineY: number, height: number): Word[] {
  const words: Word[] = [];
  if (str.length === 0) return words;
  const perChar = width / str.length;
  const re = /\S+/g;
  for (let m = re.exec(str); m !== null; m = re.exec(str)) {
    words.push({
      text: m[0],
      x1: x + m.index * perChar,
      x2: x + (m.index + m[0].length) * perChar,
      baselineY,
      height,
    });
  }
  return words;
}

/** Raster-image boxes in page user space, from the painted operator stream. */
function imageBoxes(fnArray: number[], argsArray: unknown[]): Array<[number, number, number, number]> {
  const paintOps = new Set([OPS.paintImageXObject, OPS.paintImageXObjectRepeat]);
  const boxes: Array<[number, number, number, number]> = [];
  let ctm: Matrix = IDENTITY;
  const stack: Matrix[] = [];
  for (let i = 0; i < fnArray.length; i++) {
    const fn = fnArray[i];
    if (fn === OPS.save) {
      stack.push(ctm);
    } else if (fn === OPS.restore) {
      ctm = stack.pop() ?? IDENTITY;
    } else if (fn === OPS.transform) {
      ctm = multiply(argsArray[i] as Matrix, ctm);
    } else if (paintOps.has(fn)) {
      // images paint into the unit square under the current transform
      const corners = [apply(ctm, 0, 0), apply(ctm, 1, 0), apply(ctm, 0, 1), apply(ctm, 1, 1)];
      const xs = corners.map((c) => c[0]);
      const ys = corners.map((c) => c[1]);
      boxes.push([Math.min(...xs), Math.min(...ys), Math.max(...xs), Math.max(...ys)]);
    }
  }
  return boxes;
}

interface RawTextItem {
  str: string;
  transform: number[];
  width: number;
  height: number;
}

function isTextItem(item: unknown): item is RawTextItem {
  return typeof item === "object" && item !== null && "str" in item && "transform" in item;
}

/**
 * Extract one page.  Tokens appear in extractor order, words first and image
 * placeholders last; ids restart at 0 on every page.  Blocks are runs of
 * words sharing a baseline (the extractor exposes no richer grouping), and
 * every image placeholder is its own block.
 */
async function extractPage(
  page: { view: number[]; getTextContent(): Promise<{ items: unknown[] }>; getOperatorList(): Promise<{ fnArray: number[]; argsArray: unknown[] }> },
  pageNo: number,
  wantImages: boolean,
): Promise<PageDump> {
  const [vx1, vy1, vx2, vy2] = page.view;
  const width = vx2 - vx1;
  const height = vy2 - vy1;

  const content = await page.getTextContent();
  const words: Word[] = [];
  for (const item of content.items) {
    if (!isTextItem(item) || item.str.length === 0 || item.width === 0) continue;
    const [, , , d, e, f] = item.transform;
    words.push(...splitRun(item.str, e, item.width, f, item.height || Math.abs(d)));
  }

  const tokens: TokenDump[] = [];
  let blockId = -1;
  let lastBaseline = Number.POSITIVE_INFINITY;
  for (const word of words) {
    if (Math.abs(word.baselineY - lastBaseline) > 0.5) {
      blockId += 1;
      lastBaseline = word.baselineY;
    }
    tokens.push({
      id: tokens.length,
      text: word.text,
      bbox: clampBox(
        [word.x1, height - (word.baselineY + word.height), word.x2, height - word.baselineY],
        width,
        height,
      ),
      block_id: blockId,
      is_image: false,
    });
  }

  if (wantImages) {
    const ops = await page.getOperatorList();
    for (const [x1, y1, x2, y2] of imageBoxes(ops.fnArray, ops.argsArray)) {
      if (x2 - x1 <= 0 || y2 - y1 <= 0) continue;
      blockId += 1;
      tokens.push({
        id: tokens.length,
        text: "",
        bbox: clampBox([x1, height - y2, x2, height - y1], width, height),
        block_id: blockId,
        is_image: true,
      });
    }
  }

  return { page_no: pageNo, width, height, tokens };
}

export async function extractDocument(path: string, options: DumpOptions = {}): Promise<TokensFile> {
  const doc = await getDocument({ url: path, useSystemFonts: true }).promise;
  try {
    const [first, last] = options.pages ?? [1, doc.numPages];
    if (first < 1 || last > doc.numPages || first > last) {
      throw new Error(
        `page range ${first}:${last} outside document (1:${doc.numPages})`,
      );
    }
    const pages: PageDump[] = [];
    for (let p = first; p <= last; p++) {
      pages.push(await extractPage(await doc.getPage(p), p - 1, options.images !== false));
    }
    return {
      format_version: TOKENS_FORMAT_VERSION,
      doc_id: basename(path).replace(/\.pdf$/i, ""),
      pages,
    };
  } finally {
    await doc.destroy();
  }
}
