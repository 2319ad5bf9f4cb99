/** Shapes of the versioned tokens file this tool emits. */

export const TOKENS_FORMAT_VERSION = 1;

/** How far a box may poke past the page edge before it counts as invalid. */
export const PAGE_EDGE_TOLERANCE = 1.0;

/** [x1, y1, x2, y2] in PDF points, top-left origin, y growing downward. */
export type Bbox = [number, number, number, number];

export interface TokenDump {
  id: number;
  text: string;
  bbox: Bbox;
  block_id: number;
  is_image: boolean;
}

export interface PageDump {
  page_no: number;
  width: number;
  height: number;
  tokens: TokenDump[];
}

export interface TokensFile {
  format_version: number;
  doc_id: string;
  pages: PageDump[];
}

export interface DumpOptions {
  /** 1-based inclusive page range; undefined dumps every page. */
  pages?: [number, number];
  /** Emit one empty-text token per painted raster image (default true). */
  images?: boolean;
}
