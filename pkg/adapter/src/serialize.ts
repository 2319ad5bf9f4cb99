/**
 * Canonical JSON: keys sorted, 1-space indent, trailing newline.  Emitting
 * through this single path is what makes repeated dumps byte-identical.
 */
export function canonicalJson(value: unknown): string {
  return render(value, "") + "\n";
}

function render(value: unknown, indent: string): string {
  if (value === null || typeof value === "boolean" || typeof value === "string") {
    return JSON.stringify(value);
  }
  if (typeof value === "number") {
    if (!Number.isFinite(value)) throw new Error(`non-finite number: ${value}`);
    return Object.is(value, -0) ? "0" : JSON.stringify(value);
  }
  const inner = indent + " ";
  if (Array.isArray(value)) {
    if (value.length === 0) return "[]";
    const items = value.map((v) => inner + render(v, inner));
    return "[\n" + items.join(",\n") + "\n" + indent + "]";
  }
  if (typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
    if (entries.length === 0) return "{}";
    const items = entries.map(([k, v]) => `${inner}${JSON.stringify(k)}: ${render(v, inner)}`);
    return "{\n" + items.join(",\n") + "\n" + indent + "}";
  }
  throw new Error(`cannot serialize value of type ${typeof value}`);
}
