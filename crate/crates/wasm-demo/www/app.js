import init, { relaxed_permutation, best_response_2d, run_market } from "./pkg/perfrank_wasm.js";

const $ = (id) => document.getElementById(id);
const errorBox = $("error");

function report(e) {
  errorBox.textContent = e ? String(e.message ?? e) : "";
}

// ---- relaxed permutation ----

function drawHeatmap() {
  const scores = $("scores").value.split(/[\s,]+/).filter(Boolean).map(Number);
  const tau = 10 ** Number($("tau").value);
  const iters = $("sinkhorn").checked ? Number($("iters").value) : 0;
  $("tau-out").textContent = tau.toPrecision(3);
  $("iters-out").textContent = iters || "off";
  if (scores.length < 2 || scores.some(Number.isNaN)) {
    report("scores: need at least two numbers");
    return;
  }
  let h;
  try {
    h = relaxed_permutation(Float64Array.from(scores), tau, iters);
  } catch (e) {
    report(e);
    return;
  }
  report();
  const c = h.size();
  const cells = h.cells();
  const canvas = $("heatmap");
  const ctx = canvas.getContext("2d");
  const pad = 24;
  const cell = (canvas.width - pad) / c;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "11px ui-monospace, monospace";
  ctx.fillStyle = "#5b6374";
  for (let i = 0; i < c; i++) {
    ctx.fillText(String(i), pad + i * cell + cell / 2 - 3, 14);
    ctx.fillText(String(i + 1), 4, pad + i * cell + cell / 2 + 4);
  }
  for (let p = 0; p < c; p++) {
    for (let q = 0; q < c; q++) {
      const v = cells[p * c + q];
      const shade = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${shade}, ${Math.round(255 - 150 * v)}, 255)`;
      ctx.fillRect(pad + q * cell, pad + p * cell, cell - 1, cell - 1);
    }
  }
  const order = Array.from(h.hard_order());
  $("perm-info").textContent =
    `hard order: [${order.join(", ")}]  row dev ${h.row_deviation().toExponential(1)}  col dev ${h.col_deviation().toExponential(1)}`;
  h.free();
}

// ---- best response on the circle ----

const deg = (a) => (a * Math.PI) / 180;

function drawGeometry() {
  const itemA = Number($("item").value);
  const audA = Number($("aud").value);
  const alpha = 10 ** Number($("alpha").value);
  $("item-out").textContent = `${itemA}°`;
  $("aud-out").textContent = `${audA}°`;
  $("alpha-out").textContent = alpha.toPrecision(3);
  let g;
  try {
    g = best_response_2d(deg(itemA), deg(audA), alpha, 360);
  } catch (e) {
    report(e);
    return;
  }
  report();
  const canvas = $("geometry");
  const ctx = canvas.getContext("2d");
  const cx = canvas.width / 2;
  const cy = canvas.height / 2;
  const R = 110;
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  const obj = Array.from(g.objective());
  const lo = Math.min(...obj);
  const hi = Math.max(...obj);
  const n = obj.length;
  for (let s = 0; s < n; s++) {
    const t = hi > lo ? (obj[s] - lo) / (hi - lo) : 0.5;
    const a0 = (2 * Math.PI * s) / n;
    const a1 = (2 * Math.PI * (s + 1)) / n;
    ctx.strokeStyle = `hsl(${140 * t}, 60%, ${70 - 25 * t}%)`;
    ctx.lineWidth = 14;
    ctx.beginPath();
    ctx.arc(cx, cy, R + 14, -a0, -a1, true);
    ctx.stroke();
  }
  ctx.lineWidth = 1;
  ctx.strokeStyle = "#c4c9d4";
  ctx.beginPath();
  ctx.arc(cx, cy, R, 0, 2 * Math.PI);
  ctx.stroke();

  const arrow = (v, color) => {
    const x = cx + R * v[0];
    const y = cy - R * v[1];
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = 2.5;
    ctx.beginPath();
    ctx.moveTo(cx, cy);
    ctx.lineTo(x, y);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(x, y, 5, 0, 2 * Math.PI);
    ctx.fill();
  };
  const item = g.item();
  const aud = g.audience();
  const resp = g.response();
  arrow(aud, "#d0782a");
  arrow(item, "#3a6fd8");
  arrow(resp, "#2a9d5b");
  const moved = Math.hypot(resp[0] - item[0], resp[1] - item[1]);
  const angle = ((Math.atan2(resp[1], resp[0]) * 180) / Math.PI + 360) % 360;
  $("geo-info").textContent = `response at ${angle.toFixed(1)}°, moved ${moved.toFixed(3)}`;
  g.free();
}

// ---- market dynamics ----

function drawChart(run) {
  const canvas = $("chart");
  const ctx = canvas.getContext("2d");
  const W = canvas.width;
  const H = canvas.height;
  const L = 36, B = 26, T = 10, Rm = 10;
  ctx.clearRect(0, 0, W, H);
  const series = [
    [Array.from(run.ndcg()), "#3a6fd8"],
    [Array.from(run.gini()).map((v) => Math.min(1, 5 * v)), "#d0782a"],
    [Array.from(run.top_share()), "#8a4fbf"],
  ];
  const n = series[0][0].length;
  const x = (i) => L + ((W - L - Rm) * i) / Math.max(1, n - 1);
  const y = (v) => H - B - (H - B - T) * v;
  ctx.strokeStyle = "#e3e6ec";
  ctx.fillStyle = "#5b6374";
  ctx.font = "11px ui-monospace, monospace";
  for (let t = 0; t <= 4; t++) {
    const v = t / 4;
    ctx.beginPath();
    ctx.moveTo(L, y(v));
    ctx.lineTo(W - Rm, y(v));
    ctx.stroke();
    ctx.fillText(v.toFixed(2), 2, y(v) + 4);
  }
  for (let i = 0; i < n; i++) ctx.fillText(String(i), x(i) - 3, H - 8);
  for (const [vals, color] of series) {
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    vals.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
    vals.forEach((v, i) => {
      ctx.beginPath();
      ctx.arc(x(i), y(v), 3, 0, 2 * Math.PI);
      ctx.fill();
    });
  }
}

function runMarket() {
  const policy = $("policy").value;
  const lambda = Number($("lambda").value);
  const alpha = Number($("malpha").value);
  const rounds = Number($("rounds").value);
  const seed = Math.max(0, Math.floor(Number($("seed").value) || 0));
  $("run-info").textContent = "running...";
  // let the label paint before the synchronous run
  setTimeout(() => {
    const t0 = performance.now();
    try {
      const run = run_market(policy, lambda, alpha, rounds, seed);
      drawChart(run);
      const g = Array.from(run.gini());
      $("run-info").textContent =
        `simulator test acc ${run.simulator_accuracy().toFixed(3)}, Gini ${g[0].toFixed(4)} -> ${g[g.length - 1].toFixed(4)}, ${(performance.now() - t0).toFixed(0)} ms`;
      run.free();
      report();
    } catch (e) {
      $("run-info").textContent = "";
      report(e);
    }
  }, 10);
}

function bindOutputs() {
  for (const id of ["lambda", "malpha", "rounds"]) {
    const show = () => ($(`${id}-out`).textContent = $(id).value);
    $(id).addEventListener("input", show);
    show();
  }
}

await init();
for (const id of ["scores", "tau", "sinkhorn", "iters"]) $(id).addEventListener("input", drawHeatmap);
for (const id of ["item", "aud", "alpha"]) $(id).addEventListener("input", drawGeometry);
$("run").addEventListener("click", runMarket);
bindOutputs();
drawHeatmap();
drawGeometry();
runMarket();
