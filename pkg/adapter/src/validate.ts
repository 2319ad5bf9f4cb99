import type { PageDump, TokensFile } from "./types.js";
import { PAGE_EDGE_TOLERANCE, TOKENS_FORMAT_VERSION } from "./types.js";

/**
 * Check every tokens-file rule and describe the failures; an empty list
 * means the file is valid.  Mirrors what consumers enforce on load: ordered
 * in-bounds boxes, contiguous ids, text present unless the token is an
 * image placeholder.
 */
export function validateTokensFile(data: TokensFile): string[] {
  const problems: string[] = [];
  if (data.format_version !== TOKENS_FORMAT_VERSION) {
    problems.push(`unsupported format_version ${data.format_version}`);
  }
  if (!data.doc_id) {
    problems.push("empty doc_id");
  }
  const seenPages = new Set<number>();
  for (const page of data.pages) {
    if (seenPages.has(page.page_no)) {
      problems.push(`duplicate page_no ${page.page_no}`);
    }
    seenPages.add(page.page_no);
    problems.push(...validatePage(page).map((p) => `page ${page.page_no}, ${p}`));
  }
  return problems;
}

function validatePage(page: PageDump): string[] {
  const problems: string[] = [];
  if (!(page.width > 0) || !(page.height > 0)) {
    problems.push(`page size ${page.width}x${page.height} not positive`);
  }
  page.tokens.forEach((token, pos) => {
    const where = `token ${token.id}`;
    const [x1, y1, x2, y2] = token.bbox;
    if (![x1, y1, x2, y2].every(Number.isFinite)) {
      problems.push(`${where}: bbox coordinates must be finite`);
      return;
    }
    if (Math.min(x1, y1, x2, y2) < 0) problems.push(`${where}: bbox coordinates must be >= 0`);
    if (x1 > x2) problems.push(`${where}: bbox x1 > x2`);
    if (y1 > y2) problems.push(`${where}: bbox y1 > y2`);
    if (
      x1 < -PAGE_EDGE_TOLERANCE ||
      y1 < -PAGE_EDGE_TOLERANCE ||
      x2 > page.width + PAGE_EDGE_TOLERANCE ||
      y2 > page.height + PAGE_EDGE_TOLERANCE
    ) {
      problems.push(`${where}: bbox outside page bounds`);
    }
    if (token.text === "" && !token.is_image) problems.push(`${where}: empty text on a non-image token`);
    if (token.text.includes("\n")) problems.push(`${where}: text contains a newline`);
    if (token.id !== pos) problems.push(`${where}: ids must be contiguous from 0`);
    if (!Number.isInteger(token.block_id) || token.block_id < 0) {
      problems.push(`${where}: block_id must be a non-negative integer`);
    }
  });
  return problems;
}
