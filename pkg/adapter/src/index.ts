export { extractDocument } from "./extract.js";
export { canonicalJson } from "./serialize.js";
export { validateTokensFile } from "./validate.js";
export type { Bbox, DumpOptions, PageDump, TokenDump, TokensFile } from "./types.js";
export { PAGE_EDGE_TOLERANCE, TOKENS_FORMAT_VERSION } from "./types.js";
