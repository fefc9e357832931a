// Debounced latest-wins request scheduling: slider drags fire many state
// changes, the server sees at most one in-flight decode, and a newer state
// always supersedes an older pending one.
const realTimers = {
    set: (fn, ms) => setTimeout(fn, ms),
    clear: (handle) => clearTimeout(handle),
};
export class DecodeScheduler {
    constructor(send, onResult, onError, debounceMs = 100, timers = realTimers) {
        this.send = send;
        this.onResult = onResult;
        this.onError = onError;
        this.debounceMs = debounceMs;
        this.timers = timers;
        this.pending = null;
        this.inFlight = false;
        this.timer = null;
        this.generation = 0;
    }
    /** Queue the latest payload; older queued payloads are dropped. */
    submit(payload) {
        this.pending = payload;
        if (this.timer !== null)
            this.timers.clear(this.timer);
        this.timer = this.timers.set(() => {
            this.timer = null;
            void this.flush();
        }, this.debounceMs);
    }
    async flush() {
        if (this.inFlight || this.pending === null)
            return;
        const payload = this.pending;
        this.pending = null;
        const gen = ++this.generation;
        this.inFlight = true;
        try {
            const result = await this.send(payload);
            if (gen === this.generation)
                this.onResult(result, payload);
        }
        catch (err) {
            if (gen === this.generation)
                this.onError(err);
        }
        finally {
            this.inFlight = false;
            if (this.pending !== null)
                void this.flush();
        }
    }
}
