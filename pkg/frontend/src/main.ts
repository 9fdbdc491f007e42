/**
 * DOM bootstrap: canvas rendering and event wiring around ViewerCore.
 * All segmentation decisions are drawn from server-produced PNGs.
 */

import { FaithApi } from "./api.js";
import { Axis, sliceShape, voxelToPixel } from "./state.js";
import { ViewerCore } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function blobToImage(buffer: ArrayBuffer): Promise<ImageBitmap> {
  return createImageBitmap(new Blob([buffer], { type: "image/png" }));
}

class ViewerDom {
  private canvas = el<HTMLCanvasElement>("view");
  private ctx = this.canvas.getContext("2d")!;
  private baseImage: ImageBitmap | null = null;
  private overlayImage: ImageBitmap | null = null;
  private rawSlice: { data: DataView; shape: [number, number]; dtype: string } | null = null;
  private core: ViewerCore;
  private api: FaithApi;
  private scale = 4;

  constructor() {
    this.api = new FaithApi("/api/v1");
    this.core = new ViewerCore(this.api, {
      onSliceImage: (png) => void this.setBase(png),
      onPreviewImage: (png) => void this.setOverlay(png),
      onStateChange: () => this.renderChrome(),
    });
  }

  async start(): Promise<void> {
    await this.core.init();
    const meta = this.core.meta!;
    el<HTMLSpanElement>("meta").textContent =
      `${meta.dims.join(" x ")} ${meta.dtype} (W=${meta.max_value}, K=${meta.env_size})`;
    el<HTMLInputElement>("window-hi").value = String(meta.max_value);
    this.restoreHash();

    for (const axis of ["x", "y", "z"] as Axis[]) {
      el<HTMLButtonElement>(`axis-${axis}`).addEventListener("click", () => {
        void this.core.showSlice(axis, 0);
      });
    }
    el<HTMLInputElement>("slice-index").addEventListener("change", (ev) => {
      void this.core.showSlice(this.core.state.axis, Number((ev.target as HTMLInputElement).value));
    });
    document.addEventListener("keydown", (ev) => {
      if (ev.key === "ArrowUp" || ev.key === "PageUp") void this.core.stepSlice(1);
      if (ev.key === "ArrowDown" || ev.key === "PageDown") void this.core.stepSlice(-1);
    });
    // wheel adjusts window level; shift+wheel adjusts window width
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const s = this.core.state;
      const span = s.windowHi - s.windowLo;
      const step = Math.max(1, Math.round(span * 0.02)) * (ev.deltaY > 0 ? 1 : -1);
      if (ev.shiftKey) {
        void this.core.setWindow(s.windowLo, Math.max(s.windowLo + 1, s.windowHi + step));
      } else {
        void this.core.setWindow(s.windowLo + step, s.windowHi + step);
      }
    });
    this.canvas.addEventListener("click", (ev) => {
      const { col, row } = this.eventToPixel(ev);
      void this.core.clickAt(col, row).then(() => this.refreshRaw());
    });
    this.canvas.addEventListener("mousemove", (ev) => {
      const { col, row } = this.eventToPixel(ev);
      this.reportCursor(col, row);
    });
    el<HTMLButtonElement>("apply-window").addEventListener("click", () => {
      void this.core.setWindow(
        Number(el<HTMLInputElement>("window-lo").value),
        Number(el<HTMLInputElement>("window-hi").value),
      );
    });
    el<HTMLInputElement>("overlay-visible").addEventListener("change", (ev) => {
      void this.core.setOverlayVisible((ev.target as HTMLInputElement).checked);
    });
    el<HTMLInputElement>("overlay-opacity").addEventListener("input", (ev) => {
      this.core.state.overlayOpacity = Number((ev.target as HTMLInputElement).value) / 100;
      this.draw();
    });
    el<HTMLButtonElement>("train").addEventListener("click", () => {
      this.core.state.thetaG = Number(el<HTMLInputElement>("theta-g").value);
      void this.core
        .train()
        .then(() => this.renderChrome())
        .catch((err) => this.showNotice(String(err)));
    });
    el<HTMLButtonElement>("segment").addEventListener("click", () => {
      const out = el<HTMLInputElement>("out-path").value;
      void this.core.startSegmentation(out).then(() => this.trackJob());
    });

    await this.refreshRaw();
  }

  private eventToPixel(ev: MouseEvent): { col: number; row: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      col: Math.floor((ev.clientX - rect.left) / this.scale),
      row: Math.floor((ev.clientY - rect.top) / this.scale),
    };
  }

  private async setBase(png: ArrayBuffer): Promise<void> {
    this.baseImage = await blobToImage(png);
    await this.refreshRaw();
    this.draw();
  }

  private async setOverlay(png: ArrayBuffer | null): Promise<void> {
    this.overlayImage = png ? await blobToImage(png) : null;
    this.draw();
  }

  private async refreshRaw(): Promise<void> {
    const raw = await this.api.sliceRaw(this.core.state.axis, this.core.state.index);
    this.rawSlice = { data: new DataView(raw.data), shape: raw.shape, dtype: raw.dtype };
  }

  private reportCursor(col: number, row: number): void {
    if (!this.rawSlice || !this.core.meta) return;
    const [rows, cols] = this.rawSlice.shape;
    if (col < 0 || row < 0 || col >= cols || row >= rows) return;
    const idx = row * cols + col;
    const value =
      this.rawSlice.dtype === "uint16"
        ? this.rawSlice.data.getUint16(idx * 2, true)
        : this.rawSlice.data.getUint8(idx);
    const voxel = this.core.state.axis;
    const p =
      voxel === "z"
        ? [col, row, this.core.state.index]
        : voxel === "y"
          ? [col, this.core.state.index, row]
          : [this.core.state.index, col, row];
    el<HTMLSpanElement>("cursor").textContent = `(${p.join(", ")}) = ${value}`;
  }

  private draw(): void {
    if (!this.baseImage || !this.core.meta) return;
    const { rows, cols } = sliceShape(this.core.meta.dims, this.core.state.axis);
    this.canvas.width = cols * this.scale;
    this.canvas.height = rows * this.scale;
    this.ctx.imageSmoothingEnabled = false;
    this.ctx.drawImage(this.baseImage, 0, 0, this.canvas.width, this.canvas.height);
    if (this.overlayImage && this.core.state.overlayVisible) {
      this.ctx.globalAlpha = this.core.state.overlayOpacity;
      this.ctx.drawImage(this.overlayImage, 0, 0, this.canvas.width, this.canvas.height);
      this.ctx.globalAlpha = 1.0;
    }
    for (const seed of this.core.seedsOnCurrentSlice()) {
      const { col, row } = voxelToPixel(this.core.state.axis, seed);
      this.ctx.strokeStyle = "#00ff88";
      this.ctx.lineWidth = 2;
      this.ctx.strokeRect(col * this.scale - 3, row * this.scale - 3, this.scale + 6, this.scale + 6);
    }
  }

  /** Axis, index, and window live in the URL hash so a reload restores them;
   * seeds and model state come back from the server session. */
  private restoreHash(): void {
    const params = new URLSearchParams(window.location.hash.slice(1));
    const axis = params.get("axis") as Axis | null;
    const index = params.get("i");
    const lo = params.get("lo");
    const hi = params.get("hi");
    if (lo !== null && hi !== null) {
      this.core.state.windowLo = Number(lo);
      this.core.state.windowHi = Number(hi);
      el<HTMLInputElement>("window-lo").value = lo;
      el<HTMLInputElement>("window-hi").value = hi;
    }
    if (axis && index !== null) {
      void this.core.showSlice(axis, Number(index));
    }
  }

  private storeHash(): void {
    const s = this.core.state;
    window.location.hash = `axis=${s.axis}&i=${s.index}&lo=${s.windowLo}&hi=${s.windowHi}`;
  }

  private renderChrome(): void {
    const s = this.core.state;
    this.storeHash();
    el<HTMLInputElement>("slice-index").value = String(s.index);
    el<HTMLSpanElement>("seed-count").textContent = String(s.seeds.length);
    const badge = el<HTMLSpanElement>("model-status");
    badge.textContent = s.modelStatus;
    badge.className = `badge ${s.modelStatus}`;
    el<HTMLPreElement>("model-panel").textContent = this.core.modelPanelLines().join("\n");
    el<HTMLDivElement>("notice").textContent = s.notice ?? "";
    const bar = el<HTMLProgressElement>("job-progress");
    bar.value = s.jobProgress;
    el<HTMLSpanElement>("job-status").textContent = s.jobStatus ?? "";
    this.draw();
  }

  private trackJob(): void {
    void this.core.pollJobUntilDone().then(() => this.renderChrome());
    const tick = setInterval(() => {
      this.renderChrome();
      const status = this.core.state.jobStatus;
      if (status === "done" || status === "failed" || status === "cancelled") {
        clearInterval(tick);
      }
    }, 300);
  }

  private showNotice(text: string): void {
    el<HTMLDivElement>("notice").textContent = text;
  }
}

window.addEventListener("DOMContentLoaded", () => {
  void new ViewerDom().start();
});
