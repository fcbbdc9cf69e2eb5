import { describe, expect, it } from "vitest";

import {
  renderFeatureRow,
  renderFeatureTable,
  renderPredictionPanel,
  renderRecoursePanel,
  renderSurvivalChart,
} from "../src/render";
import { SessionState } from "../src/state";
import { FeatureMeta, RecourseResponse } from "../src/types";

const LOCKED: FeatureMeta = {
  name: "history_first15", actionable: false, direction: "free",
  lower_bound: 0, upper_bound: 1, aggregation_window: "first15",
};
const UP: FeatureMeta = {
  name: "activity_last15", actionable: true, direction: "increase_only",
  lower_bound: 0, upper_bound: 1, aggregation_window: "last15",
};

describe("feature rows", () => {
  it("locked features render without any input control", () => {
    const html = renderFeatureRow(LOCKED, 0.4, undefined, []);
    expect(html).not.toContain("<input");
    expect(html).toContain("badge locked");
  });

  it("actionable features render an editable input with bounds", () => {
    const html = renderFeatureRow(UP, 0.4, 0.6, []);
    expect(html).toContain("<input");
    expect(html).toContain('data-feature="activity_last15"');
    expect(html).toContain('min="0"');
    expect(html).toContain('max="1"');
    expect(html).toContain("edited");
  });

  it("violation badges show for the matching feature only", () => {
    const violations = [{ feature: "activity_last15", violation: "increase_only" }];
    expect(renderFeatureRow(UP, 0.4, 0.2, violations)).toContain("badge violation");
    expect(renderFeatureRow(LOCKED, 0.4, undefined, violations)).not.toContain("badge violation");
  });

  it("table keeps the counterfactual identity: current = original column + edit", () => {
    const s = new SessionState();
    s.loadUser([LOCKED, UP], [0.3, 0.4]);
    s.stageEdit("activity_last15", 0.75);
    const html = renderFeatureTable(s);
    expect(html).toContain("0.3000");
    expect(html).toContain("0.4000"); // original column for the edited row
    expect(html).toContain('value="0.7500"');
  });
});

describe("panels", () => {
  it("prediction panel exposes the displayed class for both outcomes", () => {
    expect(renderPredictionPanel(1, 0.8, 120, "")).toContain('data-class="1"');
    expect(renderPredictionPanel(0, 0.2, 30, "already retained")).toContain('data-class="0"');
    expect(renderPredictionPanel(null, null, null, "")).toContain("no prediction");
  });

  it("survival chart is a step path with a 90-day reference line", () => {
    const svg = renderSurvivalChart({ times: [30, 60, 120], probs: [0.9, 0.6, 0.3] });
    expect(svg).toContain('class="curve"');
    expect(svg).toContain('class="threshold"');
    expect(svg).toContain(">90d</text>");
    // step path: each point contributes a horizontal then vertical segment
    expect((svg.match(/ L /g) ?? []).length).toBeGreaterThanOrEqual(6);
  });

  it("recourse panel lists the top five changes in order", () => {
    const s = new SessionState();
    s.loadUser([LOCKED, UP], [0.3, 0.4]);
    const recourse: RecourseResponse = {
      delta: [0, 0.3],
      counterfactual: [0.3, 0.7],
      post_class: 1,
      cost_sq: 0.09,
      per_feature_changes: Array.from({ length: 7 }, (_, i) => ({
        name: `f${i}`, original: 0.1, required: 0.1 + (7 - i) / 10,
      })),
    };
    s.stageRecourse(recourse);
    const html = renderRecoursePanel(s);
    expect(html).toContain("verdict-effective");
    expect((html.match(/<tr><td>f/g) ?? []).length).toBe(5); // top five only
    expect(html.indexOf("f0")).toBeLessThan(html.indexOf("f4"));
    expect(html).toContain("original");
    expect(html).toContain("required");
  });
});
