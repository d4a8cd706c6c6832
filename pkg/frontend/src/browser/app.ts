/** Browser entry point: wires the panel model to the websocket bridge and
 * repaints the four chart groups on an animation timer. */

import { PanelClient } from "../client.js";
import { PanelModel, ControllerTab } from "../panel.js";
import { renderChannels } from "../charts.js";
import { connectWebSocket } from "../transport.js";
import { drawChart } from "./canvas.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function mount(): Promise<void> {
  const url = (el<HTMLInputElement>("server-url").value ||= `ws://${location.host}/session`);
  const client = new PanelClient(() => connectWebSocket(url));
  const model = new PanelModel(client);

  const banner = el<HTMLDivElement>("banner");
  const metricsBox = el<HTMLDivElement>("metrics");
  const gainsBox = el<HTMLDivElement>("gains");

  const renderGains = () => {
    gainsBox.innerHTML = "";
    for (const field of model.gainFields()) {
      const label = document.createElement("label");
      label.textContent = field.name;
      const input = document.createElement("input");
      input.type = "number";
      input.step = "any";
      input.value = String(field.staged);
      input.oninput = () => model.stageGain(field.name, Number(input.value));
      label.appendChild(input);
      if (field.dirty) label.classList.add("dirty");
      gainsBox.appendChild(label);
    }
  };

  for (const tab of ["pid", "leadlag", "flc"] as ControllerTab[]) {
    el<HTMLButtonElement>(`tab-${tab}`).onclick = () => {
      model.selectTab(tab);
      renderGains();
    };
  }
  el<HTMLButtonElement>("apply-gains").onclick = () => void model.applyGains().then(renderGains);
  el<HTMLButtonElement>("apply-controller").onclick = () => void model.applyController();
  el<HTMLButtonElement>("btn-start").onclick = () => void model.start();
  el<HTMLButtonElement>("btn-pause").onclick = () => void model.pause();
  el<HTMLButtonElement>("btn-reset").onclick = () => void model.reset();
  el<HTMLButtonElement>("btn-disturb").onclick = () =>
    void model.injectDisturbance(Number(el<HTMLInputElement>("impulse").value) || 0.05);
  el<HTMLButtonElement>("btn-mass").onclick = () =>
    void model.setAddedMass(
      Number(el<HTMLInputElement>("added-mass").value) || 0.2,
      Number(el<HTMLInputElement>("mount-height").value) || 0.04,
    );
  el<HTMLInputElement>("filter-w").oninput = (ev) =>
    model.stageFilterWeight(Number((ev.target as HTMLInputElement).value));
  el<HTMLButtonElement>("apply-w").onclick = () => void model.applyFilterWeight();
  el<HTMLInputElement>("run-duration").oninput = (ev) =>
    model.stageRunSetting("duration", Number((ev.target as HTMLInputElement).value));
  el<HTMLInputElement>("run-rate").oninput = (ev) =>
    model.stageRunSetting("control_rate", Number((ev.target as HTMLInputElement).value));
  el<HTMLButtonElement>("apply-scenario").onclick = () => void model.applyScenario();
  el<HTMLButtonElement>("btn-csv").onclick = async () => {
    const csv = await model.downloadRunCsv();
    if (csv === null) return;
    const blob = new Blob([csv], { type: "text/csv" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "run.csv";
    a.click();
  };

  const canvases = ["chart-angles", "chart-omega", "chart-u", "chart-pwm"].map((id) =>
    el<HTMLCanvasElement>(id),
  );
  const repaint = () => {
    banner.textContent = model.banner ?? `connected (${model.connection})`;
    banner.className = model.banner ? "banner alert" : "banner ok";
    const views = renderChannels(model.buffers);
    views.forEach((view, i) => drawChart(canvases[i], view));
    if (model.metrics) {
      const m = model.metrics;
      metricsBox.textContent =
        `settling ${m.settling_time === null ? "—" : m.settling_time.toFixed(2) + " s"}, ` +
        `overshoot ${m.overshoot_pct.toFixed(1)} %, sse ${m.steady_state_error.toExponential(2)}, ` +
        `effort ${m.effort.toFixed(2)}`;
    }
    requestAnimationFrame(repaint);
  };

  renderGains();
  await client.connect();
  repaint();
}

window.addEventListener("load", () => {
  void mount().catch((err) => {
    const banner = document.getElementById("banner");
    if (banner) banner.textContent = String(err);
  });
});
