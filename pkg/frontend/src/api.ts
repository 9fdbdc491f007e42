/** Typed client for the segmentation service HTTP API. */

import type { Axis, JobInfo, ModelInfo, Position, VolumeMetaInfo } from "./state.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`HTTP ${status}: ${typeof detail === "string" ? detail : JSON.stringify(detail)}`);
  }
}

export interface SeedListResponse {
  positions: Position[];
  env_size: number;
  count: number;
}

export interface TrainResponse {
  model: ModelInfo;
  cv_report: Record<string, unknown>;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class FaithApi {
  constructor(
    private base: string = "/api/v1",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchImpl(this.base + path, init);
    if (!response.ok) {
      let detail: unknown;
      try {
        detail = (await response.json()).detail;
      } catch {
        detail = response.statusText;
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    return (await this.request(path, init)).json() as Promise<T>;
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  volumeMeta(): Promise<VolumeMetaInfo> {
    return this.json("/volume/meta");
  }

  async slicePng(axis: Axis, index: number, lo?: number, hi?: number): Promise<ArrayBuffer> {
    const params = new URLSearchParams();
    if (lo !== undefined) params.set("lo", String(lo));
    if (hi !== undefined) params.set("hi", String(hi));
    const query = params.size ? `?${params}` : "";
    const response = await this.request(`/slice/${axis}/${index}${query}`);
    return response.arrayBuffer();
  }

  async sliceRaw(
    axis: Axis,
    index: number,
  ): Promise<{ data: ArrayBuffer; shape: [number, number]; dtype: string }> {
    const response = await this.request(`/slice/${axis}/${index}/raw`);
    const shape = JSON.parse(response.headers.get("X-Shape") ?? "[0,0]") as [number, number];
    const dtype = response.headers.get("X-Dtype") ?? "uint8";
    return { data: await response.arrayBuffer(), shape, dtype };
  }

  seeds(): Promise<SeedListResponse> {
    return this.json("/seeds");
  }

  async addSeed(position: Position): Promise<SeedListResponse> {
    return (await this.post("/seeds", { position })).json() as Promise<SeedListResponse>;
  }

  async deleteSeed(position: Position): Promise<SeedListResponse> {
    const response = await this.request("/seeds", {
      method: "DELETE",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ position }),
    });
    return response.json() as Promise<SeedListResponse>;
  }

  async train(body: {
    theta_g: number;
    K?: number;
    features?: string[];
    k_max?: number;
    eps_path?: number;
    folds?: number;
  }): Promise<TrainResponse> {
    return (await this.post("/train", body)).json() as Promise<TrainResponse>;
  }

  model(): Promise<ModelInfo> {
    return this.json("/model");
  }

  async previewPng(axis: Axis, index: number): Promise<ArrayBuffer> {
    const response = await this.post("/preview", { axis, index });
    return response.arrayBuffer();
  }

  async startSegmentation(body: {
    out_path: string;
    slab?: number;
    workers?: number;
  }): Promise<string> {
    const result = (await (await this.post("/segment", body)).json()) as { job_id: string };
    return result.job_id;
  }

  job(id: string): Promise<JobInfo> {
    return this.json(`/jobs/${id}`);
  }

  async cancelJob(id: string): Promise<JobInfo> {
    return (await this.request(`/jobs/${id}`, { method: "DELETE" })).json() as Promise<JobInfo>;
  }
}
