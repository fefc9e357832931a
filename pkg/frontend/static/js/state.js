// UI state: the component tree mirrors /api/model; slider values map 1:1 to
// the weight list sent to /api/decode, so the server-side weight map and the
// slider state can never disagree after a settled request.
export function buildTree(info) {
    const firstBound = 2 * info.probe_magnitudes[0];
    const secondBound = 2 * info.probe_magnitudes[1];
    const byIndex = new Map();
    for (const entry of info.first_level_components)
        byIndex.set(entry.index, entry);
    const roots = [];
    for (let k = 0; k < info.first_level; k++) {
        const meta = byIndex.get(k);
        const children = (info.second_level[k] ?? []).map((child) => ({
            id: `l2-${k}-${child.index}`,
            level: 2,
            ae: k,
            index: child.index,
            strength: child.strength,
            kept: child.kept,
            bound: secondBound,
            value: 0,
            activeRegion: child.active_region,
            children: [],
        }));
        roots.push({
            id: `l1-${k}`,
            level: 1,
            ae: 0,
            index: k,
            strength: meta?.strength ?? 0,
            kept: meta?.kept ?? false,
            bound: firstBound,
            value: 0,
            activeRegion: meta?.active_region ?? [],
            children,
        });
    }
    return roots;
}
export function allNodes(tree) {
    const out = [];
    for (const root of tree) {
        out.push(root);
        out.push(...root.children);
    }
    return out;
}
/** Non-zero slider values as the decode request payload. */
export function weightsFrom(tree) {
    const out = [];
    for (const node of allNodes(tree)) {
        if (node.value !== 0) {
            out.push({ level: node.level, ae: node.ae, index: node.index, value: node.value });
        }
    }
    return out;
}
export function setSlider(tree, id, value) {
    for (const node of allNodes(tree)) {
        if (node.id === id) {
            node.value = clamp(value, -node.bound, node.bound);
            return;
        }
    }
    throw new Error(`unknown slider ${id}`);
}
export function resetSliders(tree) {
    for (const node of allNodes(tree))
        node.value = 0;
}
/** Push fitted weights (z0 per level-1 dim, second[k][l]) onto the sliders. */
export function applyFitWeights(tree, z0, second) {
    for (const node of allNodes(tree)) {
        if (node.level === 1) {
            node.value = z0[node.index] ?? 0;
        }
        else {
            node.value = second[node.ae]?.[node.index] ?? 0;
        }
    }
}
/** The slider whose |value| dominates, for highlighting after a fit. */
export function dominantNode(tree) {
    let best = null;
    for (const node of allNodes(tree)) {
        if (!best || Math.abs(node.value) > Math.abs(best.value))
            best = node;
    }
    return best && best.value !== 0 ? best : null;
}
function clamp(v, lo, hi) {
    return Math.min(hi, Math.max(lo, v));
}
