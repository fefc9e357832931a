// Typed client for the meshmodes service. Every mesh shown in the UI comes
// from these endpoints; the raw response text is kept alongside the parsed
// value so views can be compared byte-for-byte.

export interface ComponentEntry {
  level: number;
  parent: number | null;
  index: number;
  strength: number;
  kept: boolean;
  center: number;
  active_region: number[];
}

export interface ModelInfo {
  levels: number;
  first_level: number;
  second_level: ComponentEntry[][];
  first_level_components: ComponentEntry[];
  d: [number, number];
  vertex_count: number;
  face_count: number;
  probe_magnitudes: [number, number];
}

export interface MeshPayload {
  positions: number[];
  faces: number[];
  displacement?: number[];
}

export interface WeightSetting {
  level: number;
  ae: number;
  index: number;
  value: number;
}

export interface ConstraintSetting {
  vertex: number;
  target: [number, number, number];
  weight?: number;
}

export interface FitResult {
  weights: { z0: number[]; second: number[][] };
  mesh: MeshPayload;
  residual: number;
}

export interface RawResponse<T> {
  value: T;
  raw: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<RawResponse<T>> {
    const res = await this.fetchImpl(this.base + path, init);
    const raw = await res.text();
    if (!res.ok) {
      let message = `HTTP ${res.status}`;
      try {
        const body = JSON.parse(raw);
        if (body && typeof body.error === "string") message = body.error;
      } catch {
        // non-JSON error body; keep the status message
      }
      throw new ApiError(res.status, message);
    }
    return { value: JSON.parse(raw) as T, raw };
  }

  getModel(): Promise<RawResponse<ModelInfo>> {
    return this.request<ModelInfo>("/api/model");
  }

  getReference(): Promise<RawResponse<MeshPayload>> {
    return this.request<MeshPayload>("/api/reference");
  }

  decode(weights: WeightSetting[]): Promise<RawResponse<MeshPayload>> {
    return this.request<MeshPayload>("/api/decode", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ weights }),
    });
  }

  fit(constraints: ConstraintSetting[]): Promise<RawResponse<FitResult>> {
    return this.request<FitResult>("/api/fit", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ constraints }),
    });
  }
}
