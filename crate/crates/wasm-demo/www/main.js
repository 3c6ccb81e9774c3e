import init, { codewordPmf, crbCurve, fddBeamPrecision } from "./pkg/pmi_wasm.js";

const SVG = "http://www.w3.org/2000/svg";
const $ = (id) => document.getElementById(id);

function el(name, attrs, text) {
  const node = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function clear(svg) {
  while (svg.firstChild) svg.removeChild(svg.firstChild);
}

function rows(flat, width) {
  const out = [];
  for (let i = 0; i < flat.length; i += width) out.push(Array.from(flat.slice(i, i + width)));
  return out;
}

function table(node, header, body, fmt) {
  node.innerHTML = "";
  const head = node.insertRow();
  for (const h of header) head.appendChild(Object.assign(document.createElement("th"), { textContent: h }));
  for (const r of body) {
    const tr = node.insertRow();
    r.forEach((v, i) => (tr.insertCell().textContent = i === 0 ? v : fmt(v)));
  }
}

// Line plot with optional log axes. `series` is [{ color, points: [[x, y]] }].
function linePlot(svg, series, { logX = false, logY = false, yMin, yMax } = {}) {
  clear(svg);
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height");
  const m = { l: 56, r: 12, t: 12, b: 32 };
  const fx = logX ? Math.log10 : (v) => v;
  const fy = logY ? Math.log10 : (v) => v;
  const xs = series.flatMap((s) => s.points.map((p) => fx(p[0])));
  const ys = series.flatMap((s) => s.points.map((p) => fy(p[1])));
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y0 = yMin ?? Math.min(...ys), y1 = yMax ?? Math.max(...ys);
  const sx = (v) => m.l + ((fx(v) - x0) / (x1 - x0 || 1)) * (w - m.l - m.r);
  const sy = (v) => h - m.b - ((fy(v) - y0) / (y1 - y0 || 1)) * (h - m.t - m.b);
  svg.appendChild(el("line", { x1: m.l, y1: h - m.b, x2: w - m.r, y2: h - m.b, stroke: "#999" }));
  svg.appendChild(el("line", { x1: m.l, y1: m.t, x2: m.l, y2: h - m.b, stroke: "#999" }));
  for (const p of series[0].points) {
    svg.appendChild(el("text", { x: sx(p[0]), y: h - 10, "font-size": 11, "text-anchor": "middle" }, p[0]));
  }
  for (const f of [0, 0.5, 1]) {
    const v = y0 + f * (y1 - y0);
    const label = logY ? (10 ** v).toExponential(1) : v.toFixed(2);
    const y = h - m.b - f * (h - m.t - m.b);
    svg.appendChild(el("text", { x: m.l - 6, y: y + 4, "font-size": 11, "text-anchor": "end" }, label));
  }
  for (const s of series) {
    const d = s.points.map((p, i) => `${i ? "L" : "M"}${sx(p[0])},${sy(p[1])}`).join(" ");
    svg.appendChild(el("path", { d, fill: "none", stroke: s.color, "stroke-width": 2 }));
    for (const p of s.points) svg.appendChild(el("circle", { cx: sx(p[0]), cy: sy(p[1]), r: 3, fill: s.color }));
  }
}

function drawPmf() {
  const tau = 10 ** +$("pmf-tau").value;
  $("pmf-tau-value").textContent = tau.toPrecision(3);
  const svg = $("pmf-plot");
  try {
    const out = codewordPmf(tau, +$("pmf-seed").value);
    const n = out.length / 2;
    const probs = out.slice(0, n), gains = out.slice(n);
    clear(svg);
    const w = +svg.getAttribute("width"), h = +svg.getAttribute("height");
    const bw = (w - 40) / n;
    probs.forEach((p, i) => {
      const bh = p * (h - 50);
      const x = 20 + i * bw + 8;
      svg.appendChild(el("rect", { x, y: h - 30 - bh, width: bw - 16, height: bh, fill: "#1f77b4" }));
      svg.appendChild(el("text", { x: x + (bw - 16) / 2, y: h - 34 - bh, "font-size": 12, "text-anchor": "middle" }, p.toFixed(3)));
      svg.appendChild(el("text", { x: x + (bw - 16) / 2, y: h - 12, "font-size": 11, "text-anchor": "middle" }, `#${i} gain ${gains[i].toFixed(3)}`));
    });
    $("pmf-msg").textContent = "";
  } catch (e) {
    $("pmf-msg").textContent = String(e.message ?? e);
  }
}

function runCrb() {
  try {
    const out = rows(crbCurve(+$("crb-tau").value, +$("crb-trials").value, +$("crb-seed").value), 3);
    linePlot($("crb-plot"), [
      { color: "#1f77b4", points: out.map((r) => [r[0], r[1]]) },
      { color: "#d62728", points: out.map((r) => [r[0], r[2]]) },
    ], { logX: true, logY: true });
    table($("crb-table"), ["T", "MSE", "CRB", "MSE / CRB"], out.map((r) => [r[0], r[1], r[2], r[1] / r[2]]), (v) => v.toPrecision(3));
    $("crb-msg").textContent = "";
  } catch (e) {
    $("crb-msg").textContent = String(e.message ?? e);
  }
}

function runFdd() {
  try {
    const out = rows(fddBeamPrecision(+$("fdd-streams").value, +$("fdd-samples").value, +$("fdd-seed").value), 4);
    const colors = ["#7f7f7f", "#ff7f0e", "#2ca02c"];
    linePlot($("fdd-plot"), colors.map((color, k) => ({ color, points: out.map((r) => [r[0], r[k + 1]]) })), {
      logX: true,
      yMin: 0,
      yMax: 1,
    });
    table($("fdd-table"), ["T", "two-stage", "spectral", "subspace MLE"], out, (v) => v.toFixed(3));
    $("fdd-msg").textContent = "";
  } catch (e) {
    $("fdd-msg").textContent = String(e.message ?? e);
  }
}

await init();
$("pmf-tau").addEventListener("input", drawPmf);
$("pmf-seed").addEventListener("change", drawPmf);
$("crb-run").addEventListener("click", runCrb);
$("fdd-run").addEventListener("click", runFdd);
drawPmf();
