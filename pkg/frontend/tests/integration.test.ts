// Explorer acceptance checks against a live inference service.
//
// beforeAll builds a tiny model stack through the pipeline CLI (cached under
// .artifacts/) and starts `churn-recourse serve`; the tests then drive the
// controller exactly as the UI does.

import { execSync, spawn, ChildProcess } from "node:child_process";
import { existsSync, readFileSync } from "node:fs";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { ExplorerController } from "../src/controller";
import { renderFeatureTable } from "../src/render";
import { splitCsv } from "../src/state";

const ROOT = join(__dirname, "..");
const ART = join(ROOT, ".artifacts");
const PORT = 8731;
const URL = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let deniedFeatures: number[] = [];
let retainedFeatures: number[] = [];

function sh(cmd: string): void {
  execSync(cmd, { stdio: "pipe" });
}

async function serviceUp(): Promise<boolean> {
  try {
    const resp = await fetch(`${URL}/features`);
    return resp.ok;
  } catch {
    return false;
  }
}

beforeAll(async () => {
  if (!existsSync(join(ART, "gan", "bundle.json"))) {
    sh(`churn-recourse generate-data --out ${ART}/data --users 260 --seed 31 --censor-rate 0.15`);
    sh(
      `churn-recourse train-forest --train ${ART}/data/train.csv --meta ${ART}/data/meta.json ` +
        `--trees 5 --seed 32 --out ${ART}/forest.json`,
    );
    sh(
      `churn-recourse distill --forest ${ART}/forest.json --train ${ART}/data/train.csv ` +
        `--meta ${ART}/data/meta.json --seed 33 --out ${ART}/surrogate.json`,
    );
    sh(
      `churn-recourse train-gan --forest ${ART}/forest.json --surrogate ${ART}/surrogate.json ` +
        `--train ${ART}/data/train.csv --meta ${ART}/data/meta.json --out ${ART}/gan ` +
        `--iterations 120 --seed 34`,
    );
  }
  server = spawn(
    "churn-recourse",
    [
      "serve",
      "--forest", join(ART, "forest.json"),
      "--gan", join(ART, "gan"),
      "--meta", join(ART, "data", "meta.json"),
      "--port", String(PORT),
    ],
    { stdio: "ignore" },
  );
  for (let i = 0; i < 100 && !(await serviceUp()); i++) {
    await new Promise((r) => setTimeout(r, 200));
  }
  if (!(await serviceUp())) {
    throw new Error("inference service did not come up");
  }

  // probe the held-out panel for one denied and one retained user
  const api = new ApiClient(URL);
  const meta = await api.features();
  const rows = splitCsv(readFileSync(join(ART, "data", "test.csv"), "utf-8"));
  const header = rows[0];
  const featIdx = meta.map((m) => header.indexOf(m.name));
  for (const row of rows.slice(1)) {
    const x = featIdx.map((j) => Number(row[j]));
    const pred = await api.predict(x);
    if (pred.body.class === 0 && deniedFeatures.length === 0) deniedFeatures = x;
    if (pred.body.class === 1 && retainedFeatures.length === 0) retainedFeatures = x;
    if (deniedFeatures.length && retainedFeatures.length) break;
  }
  expect(deniedFeatures.length).toBeGreaterThan(0);
  expect(retainedFeatures.length).toBeGreaterThan(0);
});

afterAll(() => {
  server?.kill();
});

function makeController(): ExplorerController {
  return new ExplorerController(new ApiClient(URL), 0);
}

describe("explorer coherence against the live service", () => {
  it("applying the fetched recourse shows a class equal to its post_class", async () => {
    const c = makeController();
    await c.loadUser(deniedFeatures);
    expect(c.displayed!.predictedClass).toBe(0);
    await c.applyRecourse();
    expect(c.state.lastRecourse).not.toBeNull();
    const recourse = c.state.lastRecourse!;
    // staged edits equal the recourse deltas exactly
    const staged = c.state.currentFeatures();
    recourse.delta.forEach((d, j) => {
      expect(staged[j]).toBeCloseTo(deniedFeatures[j] + d, 12);
    });
    expect(c.displayed!.predictedClass).toBe(recourse.post_class);
  });

  it("reverting all edits restores the baseline prediction byte-for-byte", async () => {
    const c = makeController();
    await c.loadUser(deniedFeatures);
    const baseline = c.state.baselineRaw;
    expect(baseline).not.toBeNull();
    c.editFeature(c.meta().find((m) => m.actionable)!.name, 0.91);
    await c.flush();
    expect(c.state.hasEdits()).toBe(true);
    await c.revert();
    expect(c.state.lastPredictionRaw).toBe(baseline);
    expect(c.displayed!.predictedClass).toBe(0);
  });

  it("a retained user yields the already-retained state", async () => {
    const c = makeController();
    await c.loadUser(retainedFeatures);
    expect(c.displayed!.predictedClass).toBe(1);
    expect(c.recourseApplicable).toBe(false);
    await c.applyRecourse(); // 409 surfaces as a status, not an exception
    expect(c.statusMessage).toBe("already retained");
  });
});

describe("constraint UX against the live service", () => {
  it("locked features cannot be edited: no control in the DOM, controller refuses", async () => {
    const c = makeController();
    await c.loadUser(deniedFeatures);
    const locked = c.meta().find((m) => !m.actionable)!;
    const html = renderFeatureTable(c.state);
    const row = html.split("\n").find((r) => r.includes(`data-feature="${locked.name}"`))!;
    expect(row).not.toContain("<input");
    expect(() => c.editFeature(locked.name, 0.9)).toThrow(/locked/);
  });

  it("lowering an increase_only feature surfaces a violation badge from /whatif", async () => {
    const c = makeController();
    await c.loadUser(deniedFeatures);
    const meta = c.meta();
    const j = meta.findIndex((m) => m.direction === "increase_only" && deniedFeatures[meta.indexOf(m)] > 0.05);
    const target = meta[j];
    c.editFeature(target.name, Math.max(0, deniedFeatures[j] - 0.05));
    await c.flush();
    expect(
      c.state.violations.some(
        (v) => v.feature === target.name && v.violation === "increase_only",
      ),
    ).toBe(true);
    const html = renderFeatureTable(c.state);
    const row = html.split("\n").find((r) => r.includes(`data-feature="${target.name}"`))!;
    expect(row).toContain("badge violation");
  });

  it("debounced edits collapse into a refreshed what-if prediction", async () => {
    const c = makeController();
    await c.loadUser(deniedFeatures);
    const free = c.meta().filter((m) => m.actionable);
    c.editFeature(free[0].name, 0.9);
    c.editFeature(free[1].name, 0.9);
    await c.flush();
    expect(c.state.historyLength()).toBeGreaterThanOrEqual(1);
    expect([0, 1]).toContain(c.displayed!.predictedClass);
  });
});
