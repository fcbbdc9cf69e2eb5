// Browser entry point: wires the controller to the DOM.

import { ApiClient } from "./api";
import { ExplorerController } from "./controller";
import {
  renderFeatureTable,
  renderPredictionPanel,
  renderRecoursePanel,
  renderSurvivalChart,
} from "./render";
import { parseCsvRow, splitCsv } from "./state";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const serviceUrl =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8000";
const controller = new ExplorerController(new ApiClient(serviceUrl));

function redraw(): void {
  const s = controller.state;
  byId("feature-table").innerHTML = renderFeatureTable(s);
  const d = controller.displayed;
  byId("prediction").innerHTML = renderPredictionPanel(
    d ? d.predictedClass : null,
    d ? d.score : null,
    d ? d.medianLifetimeDays : null,
    controller.statusMessage,
  );
  byId("survival").innerHTML = s.lastPrediction
    ? renderSurvivalChart(s.lastPrediction.survival_curve)
    : "";
  byId("recourse").innerHTML = renderRecoursePanel(s);
  const btn = byId<HTMLButtonElement>("get-recourse");
  btn.disabled = !controller.recourseApplicable;
  btn.title = controller.recourseApplicable ? "" : "already retained";
  byId("history").textContent = `${s.historyLength()} what-ifs this session`;

  for (const input of byId("feature-table").querySelectorAll<HTMLInputElement>("input[data-feature]")) {
    input.addEventListener("change", () => {
      try {
        controller.editFeature(input.dataset.feature!, Number(input.value));
        byId("load-error").textContent = "";
      } catch (err) {
        byId("load-error").textContent = String(err);
      }
    });
  }
}

controller.onChange = redraw;

byId<HTMLButtonElement>("load-user").addEventListener("click", async () => {
  try {
    const values = byId<HTMLTextAreaElement>("feature-input")
      .value.split(",")
      .map((v) => Number(v.trim()));
    await controller.loadUser(values);
    byId("load-error").textContent = "";
  } catch (err) {
    byId("load-error").textContent = String(err);
  }
});

byId<HTMLInputElement>("csv-input").addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  try {
    const rows = splitCsv(await file.text());
    if (rows.length < 2) throw new Error("CSV needs a header and at least one row");
    const meta = controller.meta().length
      ? controller.meta()
      : await new ApiClient(serviceUrl).features();
    const wanted = byId<HTMLInputElement>("csv-user").value.trim();
    const row = wanted
      ? rows.slice(1).find((r) => r[0] === wanted)
      : rows[1];
    if (!row) throw new Error(`user ${wanted} not found in the file`);
    const parsed = parseCsvRow(rows[0], row, meta);
    await controller.loadUser(parsed.features);
    byId("load-error").textContent = `loaded ${parsed.userId}`;
  } catch (err) {
    byId("load-error").textContent = String(err);
  }
});

byId<HTMLButtonElement>("get-recourse").addEventListener("click", () => {
  void controller.applyRecourse().catch((err) => {
    byId("load-error").textContent = String(err);
  });
});

byId<HTMLButtonElement>("revert").addEventListener("click", () => {
  void controller.revert();
});
