/**
 * Headless viewer core: owns the view state, talks to the service, and
 * exposes everything the DOM layer renders. The core never computes a
 * threshold or a segmentation decision itself; every displayed number and
 * every overlay pixel comes from service responses.
 */

import { ApiError, FaithApi } from "./api.js";
import {
  Axis,
  ModelInfo,
  Position,
  RequestSequencer,
  ViewState,
  VolumeMetaInfo,
  clampIndex,
  hitTestSeed,
  initialViewState,
  pixelToVoxel,
  seedsOnSlice,
  sliceCount,
} from "./state.js";

export interface ViewerEvents {
  onSliceImage?: (png: ArrayBuffer) => void;
  onPreviewImage?: (png: ArrayBuffer | null) => void;
  onStateChange?: (state: ViewState) => void;
}

export class ViewerCore {
  state: ViewState = initialViewState();
  meta: VolumeMetaInfo | null = null;
  model: ModelInfo | null = null;
  lastSliceImage: ArrayBuffer | null = null;
  lastPreviewImage: ArrayBuffer | null = null;

  private sliceSeq = new RequestSequencer();
  private previewSeq = new RequestSequencer();

  constructor(
    private api: FaithApi,
    private events: ViewerEvents = {},
  ) {}

  private emit(): void {
    this.events.onStateChange?.(this.state);
  }

  private notice(text: string | null): void {
    this.state.notice = text;
    this.emit();
  }

  /** Reconstructs client state from the server session (meta, seeds, model). */
  async init(): Promise<void> {
    this.meta = await this.api.volumeMeta();
    this.state.windowLo = 0;
    this.state.windowHi = this.meta.max_value;
    this.state.index = clampIndex(
      Math.floor(sliceCount(this.meta.dims, this.state.axis) / 2),
      this.meta.dims,
      this.state.axis,
    );
    const seeds = await this.api.seeds();
    this.state.seeds = seeds.positions;
    try {
      this.model = await this.api.model();
      this.state.modelStatus = "trained";
      this.state.thetaG = this.model.theta_g;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.state.modelStatus = this.state.seeds.length ? "stale" : "absent";
      } else {
        throw err;
      }
    }
    await this.showSlice(this.state.axis, this.state.index);
  }

  seedsOnCurrentSlice(): Position[] {
    return seedsOnSlice(this.state.seeds, this.state.axis, this.state.index);
  }

  async showSlice(axis: Axis, index: number): Promise<void> {
    if (!this.meta) throw new Error("viewer not initialized");
    this.state.axis = axis;
    this.state.index = clampIndex(index, this.meta.dims, axis);
    const ticket = this.sliceSeq.issue();
    const png = await this.api.slicePng(
      axis,
      this.state.index,
      this.state.windowLo,
      this.state.windowHi,
    );
    if (!this.sliceSeq.isCurrent(ticket)) return; // a newer slice is in flight
    this.lastSliceImage = png;
    this.events.onSliceImage?.(png);
    this.emit();
    if (this.state.overlayVisible && this.state.modelStatus === "trained") {
      await this.refreshPreview();
    } else {
      this.lastPreviewImage = null;
      this.events.onPreviewImage?.(null);
    }
  }

  async stepSlice(delta: number): Promise<void> {
    await this.showSlice(this.state.axis, this.state.index + delta);
  }

  async setWindow(lo: number, hi: number): Promise<void> {
    if (hi <= lo) return;
    this.state.windowLo = lo;
    this.state.windowHi = hi;
    await this.showSlice(this.state.axis, this.state.index);
  }

  /** Turning the overlay off redraws from cache; no request is made. */
  async setOverlayVisible(visible: boolean): Promise<void> {
    this.state.overlayVisible = visible;
    if (!visible) {
      this.events.onPreviewImage?.(null);
      this.emit();
      return;
    }
    if (this.state.modelStatus === "trained") {
      await this.refreshPreview();
    }
  }

  async refreshPreview(): Promise<void> {
    const ticket = this.previewSeq.issue();
    try {
      const png = await this.api.previewPng(this.state.axis, this.state.index);
      if (!this.previewSeq.isCurrent(ticket)) return; // stale response discarded
      this.lastPreviewImage = png;
      this.events.onPreviewImage?.(png);
      this.emit();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.lastPreviewImage = null;
        this.events.onPreviewImage?.(null);
        this.emit();
        return;
      }
      throw err;
    }
  }

  /**
   * A click near an existing marker deletes that seed; anywhere else it adds
   * one. Either edit makes the trained model stale.
   */
  async clickAt(col: number, row: number): Promise<void> {
    if (!this.meta) throw new Error("viewer not initialized");
    const hit = hitTestSeed(this.state.seeds, this.state.axis, this.state.index, col, row);
    try {
      if (hit) {
        const seeds = await this.api.deleteSeed(hit);
        this.state.seeds = seeds.positions;
      } else {
        const voxel = pixelToVoxel(this.state.axis, this.state.index, col, row);
        const seeds = await this.api.addSeed(voxel);
        this.state.seeds = seeds.positions;
      }
      if (this.state.modelStatus === "trained") this.state.modelStatus = "stale";
      this.notice(null);
    } catch (err) {
      if (err instanceof ApiError) {
        this.notice(this.describeApiError(err));
        return;
      }
      throw err;
    }
  }

  private describeApiError(err: ApiError): string {
    if (err.status === 422 && err.detail && typeof err.detail === "object") {
      const detail = err.detail as { message?: string; positions?: number[][] };
      const at = detail.positions?.map((p) => `(${p.join(", ")})`).join(", ") ?? "";
      return `${detail.message ?? "seed rejected"} ${at}`.trim();
    }
    return err.message;
  }

  async deleteSeed(position: Position): Promise<void> {
    const seeds = await this.api.deleteSeed(position);
    this.state.seeds = seeds.positions;
    if (this.state.modelStatus === "trained") this.state.modelStatus = "stale";
    this.emit();
  }

  async train(options: { kMax?: number; folds?: number } = {}): Promise<ModelInfo> {
    if (this.state.thetaG === null) throw new Error("set a global threshold first");
    if (!this.state.seeds.length) throw new Error("select at least one seed first");
    const response = await this.api.train({
      theta_g: this.state.thetaG,
      K: this.meta?.env_size,
      k_max: options.kMax,
      folds: options.folds,
    });
    this.model = response.model;
    this.state.modelStatus = "trained";
    this.notice(null);
    await this.refreshPreview();
    return this.model;
  }

  /**
   * Numbers shown in the model panel, verbatim from the server model JSON.
   * The UI performs no rounding so the display always matches GET /model.
   */
  modelPanelLines(): string[] {
    if (!this.model) return ["no trained model"];
    const m = this.model;
    return [
      `theta_g: ${String(m.theta_g)}`,
      `lambda: ${String(m.lambda)}`,
      `mu: ${String(m.mu)}`,
      `features: ${m.features.join(", ")}`,
      `beta: [${m.beta.map((b) => String(b)).join(", ")}]`,
      `env_size: ${String(m.env_size)}`,
      `w_max: ${String(m.w_max)}`,
    ];
  }

  async startSegmentation(outPath: string, slab?: number, workers?: number): Promise<string> {
    const jobId = await this.api.startSegmentation({
      out_path: outPath,
      slab,
      workers,
    });
    this.state.jobId = jobId;
    this.state.jobStatus = "pending";
    this.state.jobProgress = 0;
    this.emit();
    return jobId;
  }

  /** Single poll step; progress is kept monotone on the client as well. */
  async pollJobOnce(): Promise<string | null> {
    if (!this.state.jobId) return null;
    const job = await this.api.job(this.state.jobId);
    this.state.jobStatus = job.status;
    this.state.jobProgress = Math.max(this.state.jobProgress, job.progress);
    this.emit();
    return job.status;
  }

  async pollJobUntilDone(intervalMs = 250, timeoutMs = 600_000): Promise<string> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
      const status = await this.pollJobOnce();
      if (status === "done" || status === "failed" || status === "cancelled") {
        return status;
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
    throw new Error("segmentation job timed out");
  }
}
