import init, { specklePattern, shrinkCurve, reconstruct } from "./pkg/speckle_sim_web.js";

const $ = (id) => document.getElementById(id);

function drawGray(canvas, values, n) {
  const small = new ImageData(n, n);
  for (let k = 0; k < n * n; k++) {
    const v = Math.round(255 * values[k]);
    small.data.set([v, v, v, 255], 4 * k);
  }
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext("2d").putImageData(small, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function showSpeckle() {
  const n = 96;
  const img = specklePattern(n, Number($("na").value), $("squared").checked, Number($("seed").value));
  drawGray($("speckle"), img, n);
}

const PENALTIES = [
  ["ℓ1,1", 1, 1, "#1b9e77"],
  ["ℓ2,1", 2, 1, "#d95f02"],
  ["ℓ2,1/2", 2, 0.5, "#7570b3"],
  ["ℓ2,2/3", 2, 2 / 3, "#e7298a"],
];

function showCurves() {
  const canvas = $("curves");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const rmax = 4;
  const radii = Float64Array.from({ length: 401 }, (_, k) => (k * rmax) / 400);
  const lambda = Number($("lambda").value);
  const x = (r) => 30 + ((w - 40) * r) / rmax;
  const y = (v) => h - 20 - ((h - 30) * v) / rmax;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(x(0), y(0));
  ctx.lineTo(x(rmax), y(rmax));
  ctx.stroke();
  for (const [, p, q, colour] of PENALTIES) {
    const out = shrinkCurve(p, q, lambda, radii);
    ctx.strokeStyle = colour;
    ctx.beginPath();
    radii.forEach((r, k) => (k ? ctx.lineTo(x(r), y(out[k])) : ctx.moveTo(x(r), y(out[k]))));
    ctx.stroke();
  }
  $("legend").innerHTML = PENALTIES.map(([name, , , c]) => `<span style="color:${c}">■ ${name}</span>`).join(" &nbsp; ");
}

function runReconstruction() {
  const n = Number($("grid").value);
  const [p, q] = $("penalty").value.split(",").map(Number);
  $("status").textContent = "running…";
  // let the status repaint before the solver blocks the thread
  setTimeout(() => {
    const t0 = performance.now();
    try {
      const r = reconstruct(n, 16, Number($("frames").value), Number($("iters").value), p, q, 1);
      const box = $("images");
      box.innerHTML = "";
      for (const [label, data] of [["truth", r.truth], ["mean of raw frames", r.raw], ["Wiener", r.wiener], ["joint", r.joint]]) {
        const fig = document.createElement("figure");
        const c = document.createElement("canvas");
        c.width = c.height = 192;
        drawGray(c, data, r.n);
        fig.append(c, Object.assign(document.createElement("figcaption"), { textContent: label }));
        box.append(fig);
      }
      const secs = ((performance.now() - t0) / 1000).toFixed(1);
      $("status").textContent = `${r.iterations} iterations, gap/ξ = ${r.gapRatio.toFixed(3)}, ${secs} s`;
      r.free();
    } catch (e) {
      $("status").textContent = String(e);
    }
  }, 20);
}

await init();
for (const id of ["na", "squared", "seed"]) $(id).addEventListener("input", showSpeckle);
$("lambda").addEventListener("input", showCurves);
$("run").addEventListener("click", runReconstruction);
showSpeckle();
showCurves();
