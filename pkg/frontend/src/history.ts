import type { CaseRecord, Decision } from "./types";

const STORAGE_KEY = "fluorodx:history";

export const CSV_HEADER =
  "timestamp,filename,predicted label,probability(positive),decision";

function escapeField(value: string): string {
  return /[",\n\r]/.test(value) ? `"${value.replace(/"/g, '""')}"` : value;
}

/**
 * Render the history as CSV for lab records. Fixed header, one row per case,
 * LF line endings, trailing newline. Deterministic for a given history, so
 * exports are byte-for-byte reproducible.
 */
export function toCsv(records: readonly CaseRecord[]): string {
  const rows = records.map((r) =>
    [
      escapeField(r.timestamp),
      escapeField(r.filename),
      escapeField(r.label),
      r.probabilityPositive.toFixed(6),
      r.decision,
    ].join(","),
  );
  return [CSV_HEADER, ...rows].join("\n") + "\n";
}

/** Session history persisted in browser storage; survives page reloads. */
export class HistoryStore {
  constructor(private readonly storage: Storage) {}

  load(): CaseRecord[] {
    const raw = this.storage.getItem(STORAGE_KEY);
    if (raw === null) return [];
    try {
      const parsed = JSON.parse(raw);
      return Array.isArray(parsed) ? (parsed as CaseRecord[]) : [];
    } catch {
      return [];
    }
  }

  private save(records: readonly CaseRecord[]): void {
    this.storage.setItem(STORAGE_KEY, JSON.stringify(records));
  }

  /** Append a case and return its index. */
  add(record: CaseRecord): number {
    const records = this.load();
    records.push(record);
    this.save(records);
    return records.length - 1;
  }

  setDecision(index: number, decision: Decision): void {
    const records = this.load();
    if (index < 0 || index >= records.length) {
      throw new RangeError(`no history entry at index ${index}`);
    }
    records[index].decision = decision;
    this.save(records);
  }

  clear(): void {
    this.storage.removeItem(STORAGE_KEY);
  }
}
