/** Minimal dependency-free canvas line plotter for the live charts. */

import type { ChartView } from "../charts.js";

const COLORS = ["#2b7de9", "#e9842b", "#2be98a", "#d42be9"];

export function drawChart(canvas: HTMLCanvasElement, view: ChartView): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.font = "12px sans-serif";
  ctx.fillStyle = "#222";
  ctx.fillText(`${view.title} [${view.unit}]`, 8, 14);

  const all = view.series.flatMap((s) => s.points);
  if (all.length < 2) return;
  const t0 = all[0].t;
  const t1 = all[all.length - 1].t;
  let lo: number;
  let hi: number;
  if (view.yRange) {
    [lo, hi] = view.yRange;
  } else {
    lo = Math.min(...all.map((p) => p.v));
    hi = Math.max(...all.map((p) => p.v));
    if (hi - lo < 1e-9) {
      lo -= 1;
      hi += 1;
    }
  }
  const px = (t: number) => ((t - t0) / Math.max(t1 - t0, 1e-9)) * (width - 20) + 10;
  const py = (v: number) => height - 10 - ((v - lo) / (hi - lo)) * (height - 30);

  // zero line
  if (lo < 0 && hi > 0) {
    ctx.strokeStyle = "#ccc";
    ctx.beginPath();
    ctx.moveTo(10, py(0));
    ctx.lineTo(width - 10, py(0));
    ctx.stroke();
  }

  view.series.forEach((series, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    series.points.forEach((p, j) => {
      const x = px(p.t);
      const y = py(Math.max(lo, Math.min(hi, p.v)));
      if (j === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = COLORS[i % COLORS.length];
    ctx.fillText(series.label, 8 + i * 110, height - 2);
  });

  // stream gaps render as vertical dashed breaks
  ctx.strokeStyle = "#e92b2b";
  ctx.setLineDash([3, 3]);
  for (const gap of view.gaps) {
    const x = px(gap.t);
    ctx.beginPath();
    ctx.moveTo(x, 18);
    ctx.lineTo(x, height - 14);
    ctx.stroke();
  }
  ctx.setLineDash([]);

  if (view.violations.length > 0) {
    ctx.fillStyle = "#e92b2b";
    ctx.fillText(`! ${view.violations.length} range violation(s)`, width - 160, 14);
  }
}
