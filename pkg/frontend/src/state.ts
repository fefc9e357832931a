// UI state: the component tree mirrors /api/model; slider values map 1:1 to
// the weight list sent to /api/decode, so the server-side weight map and the
// slider state can never disagree after a settled request.

import type { ComponentEntry, ModelInfo, WeightSetting } from "./api.js";

export interface SliderNode {
  id: string;
  level: number;
  ae: number; // 0 for level 1, parent index for level 2
  index: number;
  strength: number;
  kept: boolean;
  bound: number; // slider range is [-bound, +bound]
  value: number;
  activeRegion: number[];
  children: SliderNode[];
}

export function buildTree(info: ModelInfo): SliderNode[] {
  const firstBound = 2 * info.probe_magnitudes[0];
  const secondBound = 2 * info.probe_magnitudes[1];
  const byIndex = new Map<number, ComponentEntry>();
  for (const entry of info.first_level_components) byIndex.set(entry.index, entry);
  const roots: SliderNode[] = [];
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

export function allNodes(tree: SliderNode[]): SliderNode[] {
  const out: SliderNode[] = [];
  for (const root of tree) {
    out.push(root);
    out.push(...root.children);
  }
  return out;
}

/** Non-zero slider values as the decode request payload. */
export function weightsFrom(tree: SliderNode[]): WeightSetting[] {
  const out: WeightSetting[] = [];
  for (const node of allNodes(tree)) {
    if (node.value !== 0) {
      out.push({ level: node.level, ae: node.ae, index: node.index, value: node.value });
    }
  }
  return out;
}

export function setSlider(tree: SliderNode[], id: string, value: number): void {
  for (const node of allNodes(tree)) {
    if (node.id === id) {
      node.value = clamp(value, -node.bound, node.bound);
      return;
    }
  }
  throw new Error(`unknown slider ${id}`);
}

export function resetSliders(tree: SliderNode[]): void {
  for (const node of allNodes(tree)) node.value = 0;
}

/** Push fitted weights (z0 per level-1 dim, second[k][l]) onto the sliders. */
export function applyFitWeights(tree: SliderNode[], z0: number[], second: number[][]): void {
  for (const node of allNodes(tree)) {
    if (node.level === 1) {
      node.value = z0[node.index] ?? 0;
    } else {
      node.value = second[node.ae]?.[node.index] ?? 0;
    }
  }
}

/** The slider whose |value| dominates, for highlighting after a fit. */
export function dominantNode(tree: SliderNode[]): SliderNode | null {
  let best: SliderNode | null = null;
  for (const node of allNodes(tree)) {
    if (!best || Math.abs(node.value) > Math.abs(best.value)) best = node;
  }
  return best && best.value !== 0 ? best : null;
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}
