import init, { q_surface, severity_curve, accuracy_histogram } from "./pkg/wps_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

let shelf = { x: 2, y: 2 };

function call(out, f) {
  const el = $(out);
  el.classList.remove("err");
  try {
    return JSON.parse(f());
  } catch (e) {
    el.classList.add("err");
    el.textContent = String(e.message || e);
    return null;
  }
}

function heat(t) {
  const r = Math.round(255 * Math.min(1, 2 * t));
  const b = Math.round(255 * Math.min(1, 2 * (1 - t)));
  return `rgb(${r},${Math.round(80 + 100 * (1 - Math.abs(2 * t - 1)))},${b})`;
}

const ARROWS = { MoveN: "↑", MoveS: "↓", MoveE: "→", MoveW: "←", Pick: "P", Deliver: "D" };

function drawSurface(v) {
  const c = $("sf-canvas");
  const g = c.getContext("2d");
  const cell = Math.floor(Math.min(c.width / v.width, c.height / v.height));
  g.clearRect(0, 0, c.width, c.height);
  const qs = v.values.filter((q) => q !== null);
  const lo = Math.min(...qs);
  const hi = Math.max(...qs);
  g.font = `${Math.round(cell / 5)}px system-ui`;
  g.textAlign = "center";
  g.textBaseline = "middle";
  for (let y = 0; y < v.height; y++) {
    for (let x = 0; x < v.width; x++) {
      const i = y * v.width + x;
      const q = v.values[i];
      g.fillStyle = q === null ? "#555" : heat(hi > lo ? (q - lo) / (hi - lo) : 0.5);
      g.fillRect(x * cell, y * cell, cell - 1, cell - 1);
      g.fillStyle = "#fff";
      if (q === null) {
        g.fillText("shelf", (x + 0.5) * cell, (y + 0.5) * cell);
      } else {
        g.fillText(q.toFixed(2), (x + 0.5) * cell, (y + 0.35) * cell);
        g.fillText(ARROWS[v.greedy[i]] || "", (x + 0.5) * cell, (y + 0.7) * cell);
      }
    }
  }
  g.strokeStyle = "#000";
  g.lineWidth = 3;
  g.strokeRect(v.dropoff.x * cell + 2, v.dropoff.y * cell + 2, cell - 5, cell - 5);
  g.beginPath();
  v.path.forEach((p, k) => {
    const px = (p.x + 0.5) * cell;
    const py = (p.y + 0.5) * cell;
    if (k === 0) g.moveTo(px, py);
    else g.lineTo(px, py);
  });
  g.strokeStyle = "rgba(255,255,255,0.8)";
  g.stroke();
  c.dataset.cell = cell;
}

function runSurface() {
  const w = num("sf-w");
  const h = num("sf-h");
  shelf = { x: Math.min(shelf.x, w - 1), y: Math.min(shelf.y, h - 1) };
  const v = call("sf-out", () =>
    q_surface(w, h, shelf.x, shelf.y, $("sf-action").value, $("sf-carrying").checked, num("sf-episodes"), num("sf-seed")),
  );
  if (!v) return;
  drawSurface(v);
  $("sf-out").textContent =
    `Q(s, ${v.action}) with carrying=${v.carrying}; box = dropoff, line = greedy rollout ` +
    `(${v.path.length - 1} ticks, delivered: ${v.delivered}); Bellman residual ${v.bellman_residual.toExponential(2)}`;
}

$("sf-canvas").addEventListener("click", (e) => {
  const cell = Number(e.target.dataset.cell || 0);
  if (!cell) return;
  const r = e.target.getBoundingClientRect();
  shelf = { x: Math.floor((e.clientX - r.left) / cell), y: Math.floor((e.clientY - r.top) / cell) };
  runSurface();
});

function axes(g, c, pad, xr, yr, xlab, ylab) {
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0])) * (c.width - 2 * pad);
  const sy = (y) => c.height - pad - ((y - yr[0]) / (yr[1] - yr[0])) * (c.height - 2 * pad);
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#888";
  g.lineWidth = 1;
  g.strokeRect(pad, pad, c.width - 2 * pad, c.height - 2 * pad);
  g.fillStyle = "#222";
  g.font = "12px system-ui";
  g.textAlign = "center";
  g.fillText(xlab, c.width / 2, c.height - 8);
  g.save();
  g.translate(12, c.height / 2);
  g.rotate(-Math.PI / 2);
  g.fillText(ylab, 0, 0);
  g.restore();
  return { sx, sy };
}

function runSeverity() {
  const v = call("sv-out", () =>
    severity_curve(num("sv-reps"), num("sv-steps"), num("sv-slip"), num("sv-deg"), num("sv-seed")),
  );
  if (!v) return;
  const c = $("sv-canvas");
  const g = c.getContext("2d");
  const ymax = Math.max(11, ...v.points.map((p) => p.score));
  const { sx, sy } = axes(g, c, 40, [0.5, 10.5], [0, ymax], "severity level", "performance score");
  g.textAlign = "right";
  for (let y = 0; y <= ymax; y += 2) g.fillText(String(y), 36, sy(y) + 4);
  g.textAlign = "center";
  for (let x = 1; x <= 10; x++) g.fillText(String(x), sx(x), c.height - 26);
  g.fillStyle = "rgba(30,90,200,0.35)";
  for (const p of v.points) {
    g.beginPath();
    g.arc(sx(p.severity), sy(p.score), 3, 0, 2 * Math.PI);
    g.fill();
  }
  g.fillStyle = "#1e5ac8";
  for (const [x, y] of v.level_means) g.fillRect(sx(x) - 4, sy(y) - 4, 8, 8);
  const line = (a, b, style, dash) => {
    g.strokeStyle = style;
    g.setLineDash(dash);
    g.lineWidth = 2;
    g.beginPath();
    g.moveTo(sx(a[0]), sy(a[1]));
    g.lineTo(sx(b[0]), sy(b[1]));
    g.stroke();
    g.setLineDash([]);
  };
  line([1, v.fit.intercept + v.fit.slope], [10, v.fit.intercept + 10 * v.fit.slope], "#1e5ac8", []);
  line(v.target[0], v.target[1], "#c33", [6, 4]);
  $("sv-out").textContent =
    `fit: score = ${v.fit.intercept.toFixed(3)} ${v.fit.slope < 0 ? "-" : "+"} ${Math.abs(v.fit.slope).toFixed(4)} x severity, ` +
    `r² ${v.fit.r_squared.toFixed(3)}, ${v.fit.n} runs (blue); target trend dashed red`;
}

function runAccuracy() {
  const v = call("ac-out", () => accuracy_histogram($("ac-name").value, num("ac-runs"), num("ac-seed")));
  if (!v) return;
  const c = $("ac-canvas");
  const g = c.getContext("2d");
  const edges = v.histogram.bin_edges;
  const peak = Math.max(...v.histogram.counts, 1);
  const { sx, sy } = axes(g, c, 40, [edges[0], edges[edges.length - 1]], [0, peak * 1.1], "accuracy (%)", "runs");
  g.fillStyle = "#3a8";
  v.histogram.counts.forEach((n, i) => {
    const x0 = sx(edges[i]);
    const x1 = sx(edges[i + 1]);
    g.fillRect(x0 + 1, sy(n), x1 - x0 - 2, sy(0) - sy(n));
  });
  g.fillStyle = "#222";
  for (let i = 0; i < edges.length; i += Math.ceil(edges.length / 12)) g.fillText(String(edges[i]), sx(edges[i]), c.height - 26);
  g.strokeStyle = "#c33";
  g.beginPath();
  g.moveTo(sx(v.spec.mean_acc), sy(0));
  g.lineTo(sx(v.spec.mean_acc), sy(peak * 1.1));
  g.stroke();
  const s = v.summary;
  $("ac-out").textContent =
    `${v.spec.name}: target mean ${v.spec.mean_acc} sd ${v.spec.sd_acc} in [${v.spec.min_acc}, ${v.spec.max_acc}]; ` +
    `drawn mean ${s.mean.toFixed(2)} sd ${s.sd.toFixed(2)} min ${s.min.toFixed(2)} max ${s.max.toFixed(2)} over ${s.n} runs`;
}

await init();
$("sf-run").addEventListener("click", runSurface);
$("sv-run").addEventListener("click", runSeverity);
$("ac-run").addEventListener("click", runAccuracy);
runSurface();
runAccuracy();
