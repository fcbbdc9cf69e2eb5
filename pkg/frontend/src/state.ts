// Client-side session state.  The service is the single source of truth for
// every prediction; this class only tracks the base vector, staged edits,
// the last responses, and an append-only history of applied what-ifs.

import {
  ConstraintViolation,
  FeatureMeta,
  PredictResponse,
  RecourseResponse,
} from "./types";

export interface HistoryEntry {
  edits: Record<string, number>;
  predictedClass: number;
  score: number;
  at: number; // Date.now()
}

export class SessionState {
  meta: FeatureMeta[] = [];
  baseFeatures: number[] = [];
  edits: Map<string, number> = new Map();
  lastPrediction: PredictResponse | null = null;
  baselineRaw: string | null = null; // raw /predict text for the unedited vector
  lastPredictionRaw: string | null = null;
  lastRecourse: RecourseResponse | null = null;
  violations: ConstraintViolation[] = [];
  private history: HistoryEntry[] = [];

  loadUser(meta: FeatureMeta[], features: number[]): void {
    if (features.length !== meta.length) {
      throw new Error(`expected ${meta.length} features, got ${features.length}`);
    }
    this.meta = meta;
    this.baseFeatures = [...features];
    this.edits = new Map();
    this.lastPrediction = null;
    this.baselineRaw = null;
    this.lastPredictionRaw = null;
    this.lastRecourse = null;
    this.violations = [];
    this.history = [];
  }

  // current features = base + accumulated edits (edits hold absolute values)
  currentFeatures(): number[] {
    return this.baseFeatures.map((v, j) => {
      const edited = this.edits.get(this.meta[j].name);
      return edited === undefined ? v : edited;
    });
  }

  currentEdits(): Record<string, number> {
    return Object.fromEntries(this.edits);
  }

  hasEdits(): boolean {
    return this.edits.size > 0;
  }

  stageEdit(name: string, value: number): void {
    const j = this.meta.findIndex((m) => m.name === name);
    if (j < 0) {
      throw new Error(`unknown feature ${name}`);
    }
    if (!this.meta[j].actionable) {
      throw new Error(`feature ${name} is locked`);
    }
    if (!Number.isFinite(value)) {
      throw new Error(`value for ${name} is not a number`);
    }
    if (value === this.baseFeatures[j]) {
      this.edits.delete(name);
    } else {
      this.edits.set(name, value);
    }
  }

  stageRecourse(recourse: RecourseResponse): void {
    this.lastRecourse = recourse;
    recourse.delta.forEach((d, j) => {
      if (d !== 0) {
        this.edits.set(this.meta[j].name, this.baseFeatures[j] + d);
      }
    });
  }

  revertAll(): void {
    this.edits = new Map();
    this.violations = [];
  }

  recordOutcome(predictedClass: number, score: number): void {
    this.history.push({
      edits: this.currentEdits(),
      predictedClass,
      score,
      at: Date.now(),
    });
  }

  // history is append-only: hand out copies, never the array itself
  historyEntries(): HistoryEntry[] {
    return this.history.map((h) => ({ ...h, edits: { ...h.edits } }));
  }

  historyLength(): number {
    return this.history.length;
  }
}

// One uploaded CSV row in the panel layout: user_id,lifetime_days,censored,<features...>
export function parseCsvRow(
  header: string[],
  row: string[],
  meta: FeatureMeta[],
): { userId: string; features: number[] } {
  const expected = ["user_id", "lifetime_days", "censored", ...meta.map((m) => m.name)];
  if (header.length !== expected.length || expected.some((c, i) => header[i] !== c)) {
    throw new Error("header does not match the panel layout (user_id,lifetime_days,censored,<features...>)");
  }
  if (row.length !== expected.length) {
    throw new Error(`row has ${row.length} cells, expected ${expected.length}`);
  }
  const features = row.slice(3).map((cell, j) => {
    const v = Number(cell);
    if (!Number.isFinite(v)) {
      throw new Error(`feature ${meta[j].name}: non-numeric value "${cell}"`);
    }
    return v;
  });
  return { userId: row[0], features };
}

export function splitCsv(text: string): string[][] {
  return text
    .split(/\r?\n/)
    .filter((line) => line.trim().length > 0)
    .map((line) => line.split(","));
}
