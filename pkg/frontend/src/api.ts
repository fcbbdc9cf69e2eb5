// Thin fetch client over the inference service.  The raw response text of
// /predict is kept alongside the parsed body so the UI can verify that
// reverting all edits restores the baseline byte-for-byte.

import {
  ApiError,
  ErrorBody,
  FeatureMeta,
  PredictResponse,
  RecourseResponse,
  WhatIfResponse,
} from "./types";

export interface PredictResult {
  body: PredictResponse;
  raw: string;
}

export class ApiClient {
  constructor(private baseUrl: string) {}

  private async request(method: string, path: string, payload?: unknown): Promise<string> {
    const resp = await fetch(this.baseUrl.replace(/\/$/, "") + path, {
      method,
      headers: payload === undefined ? undefined : { "Content-Type": "application/json" },
      body: payload === undefined ? undefined : JSON.stringify(payload),
    });
    const text = await resp.text();
    if (!resp.ok) {
      let body: ErrorBody;
      try {
        body = JSON.parse(text) as ErrorBody;
      } catch {
        body = { error: `http ${resp.status}`, detail: text };
      }
      throw new ApiError(resp.status, body);
    }
    return text;
  }

  async features(): Promise<FeatureMeta[]> {
    return JSON.parse(await this.request("GET", "/features")) as FeatureMeta[];
  }

  async predict(features: number[]): Promise<PredictResult> {
    const raw = await this.request("POST", "/predict", { features });
    return { body: JSON.parse(raw) as PredictResponse, raw };
  }

  async recourse(features: number[]): Promise<RecourseResponse> {
    const raw = await this.request("POST", "/recourse", { features });
    return JSON.parse(raw) as RecourseResponse;
  }

  async whatIf(features: number[], edits: Record<string, number>): Promise<WhatIfResponse> {
    const raw = await this.request("POST", "/whatif", { features, edits });
    return JSON.parse(raw) as WhatIfResponse;
  }
}
