import init, { weak_kam_profile, effective_h_sweep, coupling_curve } from "./pkg/kamgrid_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// series: [{ xs, ys, color, dots }]; log scales when opts.logx / opts.logy
function plot(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 36;
  ctx.clearRect(0, 0, w, h);
  const tx = opts.logx ? Math.log10 : (v) => v;
  const ty = opts.logy ? Math.log10 : (v) => v;
  const pts = series.flatMap((s) => s.xs.map((x, i) => [tx(x), ty(s.ys[i])])).filter(([x, y]) => isFinite(x) && isFinite(y));
  if (!pts.length) return;
  let [x0, x1] = [Math.min(...pts.map((p) => p[0])), Math.max(...pts.map((p) => p[0]))];
  let [y0, y1] = [Math.min(...pts.map((p) => p[1])), Math.max(...pts.map((p) => p[1]))];
  if (x1 === x0) x1 = x0 + 1;
  if (y1 === y0) { y0 -= 0.5; y1 += 0.5; }
  const sx = (x) => pad + ((tx(x) - x0) / (x1 - x0)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((ty(y) - y0) / (y1 - y0)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  const fmt = (v, log) => (log ? "1e" + v.toFixed(1) : v.toPrecision(3));
  ctx.fillText(fmt(y1, opts.logy), 2, pad + 4);
  ctx.fillText(fmt(y0, opts.logy), 2, h - pad);
  ctx.fillText(fmt(x0, opts.logx), pad, h - pad + 14);
  ctx.fillText(fmt(x1, opts.logx), w - pad - 30, h - pad + 14);
  for (const s of series) {
    ctx.strokeStyle = ctx.fillStyle = s.color;
    ctx.beginPath();
    s.xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.ys[i])) : ctx.moveTo(sx(x), sy(s.ys[i]))));
    ctx.stroke();
    if (s.dots) s.xs.forEach((x, i) => ctx.fillRect(sx(x) - 2, sy(s.ys[i]) - 2, 4, 4));
  }
}

function guard(out, f) {
  return () => {
    out.classList.remove("err");
    try {
      f();
    } catch (e) {
      out.classList.add("err");
      out.textContent = String(e.message ?? e);
    }
  };
}

function runProfile() {
  const r = JSON.parse(weak_kam_profile(num("p-n"), num("p-a"), num("p-b")));
  plot($("p-plot"), [
    { xs: r.x, ys: r.psi, color: "#1f5fbf", dots: true },
    { xs: r.x, ys: r.velocity, color: "#c0392b" },
    { xs: r.x, ys: r.potential, color: "#999" },
  ]);
  $("p-out").textContent =
    `Hbar_N = ${r.h_bar.toFixed(12)}   -min P = ${r.reference.toFixed(12)}   residual ${r.residual.toExponential(2)}\n` +
    "blue: corrector psi, red: optimal velocity, grey: potential";
}

function runSweep() {
  const r = JSON.parse(effective_h_sweep(num("p-a"), num("p-b"), num("s-lo"), num("s-hi")));
  const ns = r.points.map((p) => p.sweep_var);
  plot(
    $("s-plot"),
    [
      { xs: ns, ys: r.points.map((p) => p.error), color: "#1f5fbf", dots: true },
      { xs: ns, ys: r.points.map((p) => p.bound), color: "#999" },
    ],
    { logx: true, logy: true },
  );
  const rows = r.points.map((p) => `${String(p.sweep_var).padStart(4)}  ${p.value.toFixed(12)}  ${p.error.toExponential(3)}`);
  const slope = r.slope == null ? "n/a" : r.slope.toFixed(3);
  $("s-out").textContent = `   N  Hbar_N          error\n${rows.join("\n")}\nslope ${slope}   (grey: N^-1/2)`;
}

function runCoupling() {
  const r = JSON.parse(coupling_curve(num("c-n"), num("c-v"), num("c-m"), BigInt(num("c-seed"))));
  const t = r.rows.map((row) => row.t);
  plot($("c-plot"), [
    { xs: t, ys: r.rows.map((row) => row.mean), color: "#1f5fbf", dots: true },
    { xs: t, ys: r.rows.map((row) => row.mean + 3 * row.stderr), color: "#8fb0e0" },
    { xs: t, ys: r.rows.map((row) => row.bound), color: "#c0392b" },
  ]);
  const fails = r.rows.filter((row) => !row.pass).length;
  $("c-out").textContent =
    `${r.samples} paths, seed ${r.seed}, speed bound ${r.speed_bound}: ${fails ? fails + " times above" : "all times within"} the bound\n` +
    "blue: mean gap (light: +3 stderr), red: bound";
}

await init();
$("p-run").onclick = guard($("p-out"), runProfile);
$("s-run").onclick = guard($("s-out"), runSweep);
$("c-run").onclick = guard($("c-out"), runCoupling);
$("p-run").click();
