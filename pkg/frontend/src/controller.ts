// Orchestrates the session: every displayed class/score/median comes from a
// service response.  Edits are debounce-batched into /whatif calls; when the
// edits map is empty the refresh goes through /predict so a full revert
// reproduces the baseline response byte-for-byte.

import { ApiClient } from "./api";
import { SessionState } from "./state";
import { ApiError, FeatureMeta } from "./types";

export interface DisplayedPrediction {
  predictedClass: number;
  score: number;
  medianLifetimeDays: number;
}

export class ExplorerController {
  state = new SessionState();
  displayed: DisplayedPrediction | null = null;
  recourseApplicable = true;
  statusMessage = "";
  onChange: () => void = () => {};

  private pendingTimer: ReturnType<typeof setTimeout> | null = null;
  private pendingRefresh: Promise<void> | null = null;

  constructor(
    private api: ApiClient,
    private debounceMs = 250,
  ) {}

  async loadUser(features: number[]): Promise<void> {
    const meta = await this.api.features();
    this.state.loadUser(meta, features);
    await this.refresh();
  }

  meta(): FeatureMeta[] {
    return this.state.meta;
  }

  // stage an edit and schedule a debounced refresh
  editFeature(name: string, value: number): void {
    this.state.stageEdit(name, value);
    this.scheduleRefresh();
  }

  async applyRecourse(): Promise<void> {
    try {
      const recourse = await this.api.recourse(this.state.baseFeatures);
      this.state.stageRecourse(recourse);
      this.statusMessage = recourse.post_class === 1
        ? "recourse achieves the retained prediction"
        : "recommended action does not flip the prediction";
      await this.refresh();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.recourseApplicable = false;
        this.statusMessage = "already retained";
        this.onChange();
        return;
      }
      throw err;
    }
  }

  async revert(): Promise<void> {
    this.state.revertAll();
    await this.refresh();
  }

  private scheduleRefresh(): void {
    if (this.pendingTimer !== null) {
      clearTimeout(this.pendingTimer);
    }
    this.pendingTimer = setTimeout(() => {
      this.pendingTimer = null;
      void this.refresh();
    }, this.debounceMs);
  }

  // force any scheduled refresh to run now (tests and apply/revert paths)
  async flush(): Promise<void> {
    if (this.pendingTimer !== null) {
      clearTimeout(this.pendingTimer);
      this.pendingTimer = null;
    }
    await this.refresh();
  }

  async refresh(): Promise<void> {
    if (this.pendingRefresh) {
      await this.pendingRefresh;
    }
    this.pendingRefresh = this.doRefresh();
    try {
      await this.pendingRefresh;
    } finally {
      this.pendingRefresh = null;
    }
  }

  private async doRefresh(): Promise<void> {
    if (!this.state.hasEdits()) {
      const { body, raw } = await this.api.predict(this.state.baseFeatures);
      if (this.state.baselineRaw === null) {
        this.state.baselineRaw = raw;
      }
      this.state.lastPrediction = body;
      this.state.lastPredictionRaw = raw;
      this.state.violations = [];
      this.displayed = {
        predictedClass: body.class,
        score: body.score,
        medianLifetimeDays: body.median_lifetime_days,
      };
      this.recourseApplicable = body.class === 0;
    } else {
      const current = this.state.currentFeatures();
      const whatIf = await this.api.whatIf(this.state.baseFeatures, this.state.currentEdits());
      this.state.violations = whatIf.violated_constraints;
      this.displayed = {
        predictedClass: whatIf.class,
        score: whatIf.score,
        medianLifetimeDays: whatIf.median_lifetime_days,
      };
      this.state.recordOutcome(whatIf.class, whatIf.score);
      // keep the survival curve current when the edited point is in-bounds;
      // out-of-bounds edits keep the last curve and rely on the badges
      try {
        const { body, raw } = await this.api.predict(current);
        this.state.lastPrediction = body;
        this.state.lastPredictionRaw = raw;
      } catch (err) {
        if (!(err instanceof ApiError && err.status === 400)) {
          throw err;
        }
      }
    }
    this.onChange();
  }
}
