// Typed client for the meshmodes service. Every mesh shown in the UI comes
// from these endpoints; the raw response text is kept alongside the parsed
// value so views can be compared byte-for-byte.
export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
    }
}
export class ApiClient {
    constructor(base = "", fetchImpl = (...args) => fetch(...args)) {
        this.base = base;
        this.fetchImpl = fetchImpl;
    }
    async request(path, init) {
        const res = await this.fetchImpl(this.base + path, init);
        const raw = await res.text();
        if (!res.ok) {
            let message = `HTTP ${res.status}`;
            try {
                const body = JSON.parse(raw);
                if (body && typeof body.error === "string")
                    message = body.error;
            }
            catch {
                // non-JSON error body; keep the status message
            }
            throw new ApiError(res.status, message);
        }
        return { value: JSON.parse(raw), raw };
    }
    getModel() {
        return this.request("/api/model");
    }
    getReference() {
        return this.request("/api/reference");
    }
    decode(weights) {
        return this.request("/api/decode", {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify({ weights }),
        });
    }
    fit(constraints) {
        return this.request("/api/fit", {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify({ constraints }),
        });
    }
}
