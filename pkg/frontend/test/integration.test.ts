// End-to-end checks against a live service (set MESHMODES_SERVICE_URL).
// Drives the same state/api modules the browser UI uses, without a DOM.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import {
  allNodes,
  applyFitWeights,
  buildTree,
  dominantNode,
  resetSliders,
  setSlider,
  weightsFrom,
} from "../src/state.js";

const base = process.env.MESHMODES_SERVICE_URL ?? "";
const live = describe.skipIf(!base);

live("live service round trip", () => {
  const client = new ApiClient(base);

  it("slider set + reset restores the initial rendered mesh byte-for-byte", async () => {
    const model = (await client.getModel()).value;
    const tree = buildTree(model);
    const initial = await client.decode(weightsFrom(tree));

    const anyKept = allNodes(tree).find((n) => n.kept) ?? allNodes(tree)[0];
    setSlider(tree, anyKept.id, anyKept.bound / 2);
    const moved = await client.decode(weightsFrom(tree));
    expect(moved.raw).not.toBe(initial.raw);

    resetSliders(tree);
    const restored = await client.decode(weightsFrom(tree));
    expect(restored.raw).toBe(initial.raw);
  });

  it("every displayed mesh is byte-equal to its decode response", async () => {
    const model = (await client.getModel()).value;
    const tree = buildTree(model);
    setSlider(tree, "l1-0", 0.75);
    const shown = await client.decode(weightsFrom(tree));
    const direct = await client.decode(weightsFrom(tree));
    expect(shown.raw).toBe(direct.raw);
  });

  it("a control-point drag in a detail region lights a level-2 slider as dominant", async () => {
    const model = (await client.getModel()).value;
    const tree = buildTree(model);
    const detail = allNodes(tree)
      .filter((n) => n.level === 2 && n.kept)
      .sort((a, b) => b.strength - a.strength)[0];
    expect(detail).toBeDefined();

    // build a realizable target by decoding that component alone
    const probe = model.probe_magnitudes[1];
    const target = (await client.decode([
      { level: 2, ae: detail.ae, index: detail.index, value: probe },
    ])).value;
    const reference = (await client.decode([])).value;
    // the drag grabs the most displaced vertex of that detail component
    let vertex = 0;
    let best = -1;
    const n = target.positions.length / 3;
    for (let i = 0; i < n; i++) {
      const dx = target.positions[3 * i] - reference.positions[3 * i];
      const dy = target.positions[3 * i + 1] - reference.positions[3 * i + 1];
      const dz = target.positions[3 * i + 2] - reference.positions[3 * i + 2];
      const d = dx * dx + dy * dy + dz * dz;
      if (d > best) {
        best = d;
        vertex = i;
      }
    }
    const fit = (await client.fit([
      {
        vertex,
        target: [
          target.positions[3 * vertex],
          target.positions[3 * vertex + 1],
          target.positions[3 * vertex + 2],
        ],
        weight: 50.0,
      },
    ])).value;
    applyFitWeights(tree, fit.weights.z0, fit.weights.second);
    const top = dominantNode(tree);
    expect(top).not.toBeNull();
    expect(top!.level).toBe(2);
    expect(Number.isFinite(fit.residual)).toBe(true);
  });

  it("propagates service validation errors", async () => {
    await expect(client.decode([{ level: 1, ae: 0, index: 9999, value: 1 }]))
      .rejects.toThrowError(/out of range/);
  });
});
