// Wiring: component tree with sliders on the left, WebGL view on the right.
// Slider moves debounce into /api/decode; dragging a pinned vertex posts
// /api/fit on release and the returned weights flow back into the sliders.

import { ApiClient, MeshPayload, WeightSetting } from "./api.js";
import { colorBuffer } from "./color.js";
import { DecodeScheduler } from "./scheduler.js";
import {
  SliderNode,
  allNodes,
  applyFitWeights,
  buildTree,
  dominantNode,
  resetSliders,
  setSlider,
  weightsFrom,
} from "./state.js";
import { Viewer } from "./viewer.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function toViewerMesh(mesh: MeshPayload) {
  return {
    positions: new Float32Array(mesh.positions),
    faces: new Uint32Array(mesh.faces),
    colors: colorBuffer(mesh.displacement, mesh.positions.length / 3),
  };
}

function toast(message: string): void {
  const box = el<HTMLDivElement>("toast");
  box.textContent = message;
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 2600);
}

async function boot(): Promise<void> {
  const canvas = el<HTMLCanvasElement>("view");
  const viewer = new Viewer(canvas);
  const resize = () => {
    canvas.width = canvas.clientWidth;
    canvas.height = canvas.clientHeight;
    viewer.draw();
  };
  window.addEventListener("resize", resize);

  const model = (await api.getModel()).value;
  const tree = buildTree(model);
  // the initial scene is the zero-weight decode, so a later reset restores
  // it exactly (every displayed mesh comes from /api/decode)
  const initial = (await api.decode([])).value;
  let lastGood: MeshPayload = initial;

  viewer.setMesh(toViewerMesh(initial));
  resize();

  const residualBadge = el<HTMLSpanElement>("residual");

  const scheduler = new DecodeScheduler<WeightSetting[], MeshPayload>(
    async (weights) => (await api.decode(weights)).value,
    (mesh) => {
      lastGood = mesh;
      viewer.setMesh(toViewerMesh(mesh));
    },
    (err) => {
      toast(`decode failed: ${err instanceof Error ? err.message : err}`);
      viewer.setMesh(toViewerMesh(lastGood));
    },
    100,
  );

  const treeBox = el<HTMLDivElement>("tree");
  const sliderInputs = new Map<string, HTMLInputElement>();
  const valueLabels = new Map<string, HTMLSpanElement>();

  const syncLabels = () => {
    for (const node of allNodes(tree)) {
      const input = sliderInputs.get(node.id);
      const label = valueLabels.get(node.id);
      if (input) input.value = String(node.value);
      if (label) label.textContent = node.value.toFixed(2);
    }
  };

  const sliderRow = (node: SliderNode): HTMLDivElement => {
    const row = document.createElement("div");
    row.className = `slider-row level-${node.level}` + (node.kept ? "" : " pruned");
    const name = document.createElement("span");
    name.className = "name";
    name.textContent = node.level === 1
      ? `component ${node.index}`
      : `detail ${node.ae}.${node.index}`;
    name.title = `strength ${node.strength.toFixed(3)}, center ${node.activeRegion.length} active vertices`;
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(-node.bound);
    input.max = String(node.bound);
    input.step = "0.01";
    input.value = "0";
    input.id = `slider-${node.id}`;
    const value = document.createElement("span");
    value.className = "value";
    value.textContent = "0.00";
    input.addEventListener("input", () => {
      setSlider(tree, node.id, parseFloat(input.value));
      value.textContent = parseFloat(input.value).toFixed(2);
      scheduler.submit(weightsFrom(tree));
    });
    sliderInputs.set(node.id, input);
    valueLabels.set(node.id, value);
    row.append(name, input, value);
    return row;
  };

  for (const root of tree) {
    const details = document.createElement("details");
    details.open = root.kept;
    const summary = document.createElement("summary");
    summary.textContent = `level-1 #${root.index}` + (root.kept ? "" : " (pruned)");
    details.appendChild(summary);
    details.appendChild(sliderRow(root));
    for (const child of root.children) details.appendChild(sliderRow(child));
    treeBox.appendChild(details);
  }

  el<HTMLButtonElement>("reset").addEventListener("click", () => {
    resetSliders(tree);
    syncLabels();
    residualBadge.textContent = "";
    residualBadge.className = "";
    scheduler.submit(weightsFrom(tree));
  });

  // camera + control-point interactions
  let mode: "orbit" | "drag" | null = null;
  let pinned: number | null = null;
  let dragStart: [number, number, number] | null = null;
  let last = [0, 0];

  canvas.addEventListener("mousedown", (ev) => {
    last = [ev.offsetX, ev.offsetY];
    if (ev.shiftKey) {
      const vertex = viewer.pickVertex(ev.offsetX, ev.offsetY);
      if (vertex !== null) {
        pinned = vertex;
        const p = lastGood.positions;
        dragStart = [p[3 * vertex], p[3 * vertex + 1], p[3 * vertex + 2]];
        viewer.marker = [...dragStart] as [number, number, number];
        mode = "drag";
        viewer.draw();
        return;
      }
    }
    mode = "orbit";
  });

  canvas.addEventListener("mousemove", (ev) => {
    if (mode === "orbit") {
      viewer.yaw += (ev.offsetX - last[0]) * 0.01;
      viewer.pitch += (ev.offsetY - last[1]) * 0.01;
      last = [ev.offsetX, ev.offsetY];
      viewer.draw();
    } else if (mode === "drag" && dragStart && pinned !== null) {
      const dx = ev.offsetX - last[0];
      const dy = ev.offsetY - last[1];
      viewer.marker = viewer.dragTarget(dragStart, dx, dy);
      viewer.draw();
    }
  });

  window.addEventListener("mouseup", async () => {
    if (mode === "drag" && pinned !== null && viewer.marker) {
      const target = viewer.marker;
      const vertex = pinned;
      mode = null;
      pinned = null;
      try {
        const fit = (await api.fit([{ vertex, target, weight: 1.0 }])).value;
        lastGood = fit.mesh;
        viewer.marker = null;
        viewer.setMesh(toViewerMesh(fit.mesh));
        applyFitWeights(tree, fit.weights.z0, fit.weights.second);
        syncLabels();
        residualBadge.textContent = `residual ${fit.residual.toExponential(2)}`;
        residualBadge.className = fit.residual < 1e-3 ? "ok" : "warn";
        const top = dominantNode(tree);
        if (top) {
          const input = sliderInputs.get(top.id);
          input?.closest(".slider-row")?.classList.add("dominant");
          setTimeout(() => input?.closest(".slider-row")?.classList.remove("dominant"), 2000);
        }
      } catch (err) {
        viewer.marker = null;
        viewer.setMesh(toViewerMesh(lastGood));
        residualBadge.textContent = "fit failed";
        residualBadge.className = "error";
        toast(`fit failed: ${err instanceof Error ? err.message : err}`);
      }
      viewer.draw();
      return;
    }
    mode = null;
  });

  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    viewer.distance *= ev.deltaY > 0 ? 1.1 : 0.9;
    viewer.draw();
  });
}

boot().catch((err) => {
  const box = document.getElementById("toast");
  if (box) {
    box.textContent = `failed to load model: ${err instanceof Error ? err.message : err}`;
    box.classList.add("visible");
  }
});
