// Displacement magnitude -> blue ramp (active regions glow blue, matching
// the convention of highlighting deformed regions).
const BASE = [0.78, 0.78, 0.8];
const PEAK = [0.05, 0.25, 1.0];
export function displacementColor(value, max) {
    if (!(max > 0))
        return [...BASE];
    const t = Math.min(1, Math.max(0, value / max));
    return [
        BASE[0] + (PEAK[0] - BASE[0]) * t,
        BASE[1] + (PEAK[1] - BASE[1]) * t,
        BASE[2] + (PEAK[2] - BASE[2]) * t,
    ];
}
export function colorBuffer(displacement, vertexCount) {
    const out = new Float32Array(vertexCount * 3);
    const max = displacement ? Math.max(...displacement) : 0;
    for (let i = 0; i < vertexCount; i++) {
        const c = displacementColor(displacement ? displacement[i] : 0, max);
        out[3 * i] = c[0];
        out[3 * i + 1] = c[1];
        out[3 * i + 2] = c[2];
    }
    return out;
}
