// Debounced latest-wins request scheduling: slider drags fire many state
// changes, the server sees at most one in-flight decode, and a newer state
// always supersedes an older pending one.

export interface TimerLike {
  set(fn: () => void, ms: number): unknown;
  clear(handle: unknown): void;
}

const realTimers: TimerLike = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (handle) => clearTimeout(handle as ReturnType<typeof setTimeout>),
};

export class DecodeScheduler<T, R> {
  private pending: T | null = null;
  private inFlight = false;
  private timer: unknown = null;
  private generation = 0;

  constructor(
    private send: (payload: T) => Promise<R>,
    private onResult: (result: R, payload: T) => void,
    private onError: (err: unknown) => void,
    private debounceMs = 100,
    private timers: TimerLike = realTimers,
  ) {}

  /** Queue the latest payload; older queued payloads are dropped. */
  submit(payload: T): void {
    this.pending = payload;
    if (this.timer !== null) this.timers.clear(this.timer);
    this.timer = this.timers.set(() => {
      this.timer = null;
      void this.flush();
    }, this.debounceMs);
  }

  private async flush(): Promise<void> {
    if (this.inFlight || this.pending === null) return;
    const payload = this.pending;
    this.pending = null;
    const gen = ++this.generation;
    this.inFlight = true;
    try {
      const result = await this.send(payload);
      if (gen === this.generation) this.onResult(result, payload);
    } catch (err) {
      if (gen === this.generation) this.onError(err);
    } finally {
      this.inFlight = false;
      if (this.pending !== null) void this.flush();
    }
  }
}
