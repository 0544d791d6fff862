import init, { allocationJson, hopsJson, episodesJson } from "./pkg/edgemig_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = { am: "#d95f02", nm: "#1b9e77", ga: "#7570b3" };

function fail(el, e) {
  el.innerHTML = `<p class="error">${e}</p>`;
}

function runAllocation() {
  const out = $("alloc-out");
  try {
    const demands = $("alloc-input").value.split(",").map((s) => s.trim()).filter((s) => s !== "").map(Number);
    const v = JSON.parse(allocationJson(new Float64Array(demands)));
    const rows = demands.map((k, i) =>
      `<tr><td>${k}</td><td>${v.optimal[i].toFixed(4)}</td><td>${v.proportional[i].toFixed(4)}</td></tr>`).join("");
    out.innerHTML = `<table><tr><th>demand</th><th>optimal share</th><th>proportional share</th></tr>${rows}
      <tr><th>delay (s)</th><td>${v.optimal_delay_s.toFixed(4)}</td><td>${v.proportional_delay_s.toFixed(4)}</td></tr></table>`;
  } catch (e) {
    fail(out, e);
  }
}

function drawHops(from = 0) {
  const out = $("hop-out");
  const rows = Number($("hop-rows").value);
  const cols = Number($("hop-cols").value);
  try {
    const v = JSON.parse(hopsJson(rows, cols, $("hop-kind").value, Math.min(from, rows * cols - 1)));
    const max = Math.max(1, ...v.hops);
    const grid = document.createElement("div");
    grid.className = "grid";
    grid.style.gridTemplateColumns = `repeat(${cols}, 48px)`;
    v.hops.forEach((h, i) => {
      const c = document.createElement("div");
      c.className = "cell";
      c.textContent = h;
      c.style.background = `hsl(${220 - 200 * (h / max)}, 60%, 45%)`;
      c.onclick = () => drawHops(i);
      grid.appendChild(c);
    });
    out.replaceChildren(grid);
    const p = document.createElement("p");
    p.textContent = `${v.links.length} links`;
    out.appendChild(p);
  } catch (e) {
    fail(out, e);
  }
}

function runEpisodes() {
  const out = $("ep-out");
  out.textContent = "running...";
  setTimeout(() => {
    try {
      const eps = JSON.parse(episodesJson(
        Number($("ep-n").value), Number($("ep-t").value), Number($("ep-speed").value), Number($("ep-seed").value)));
      const w = 800, h = 240, pad = 30;
      const all = eps.flatMap((e) => e.slot_delay_s);
      const ymax = Math.max(...all) * 1.05;
      const slots = eps[0].slot_delay_s.length;
      const x = (i) => pad + (i * (w - 2 * pad)) / Math.max(1, slots - 1);
      const y = (v) => h - pad - (v / ymax) * (h - 2 * pad);
      const lines = eps.map((e) =>
        `<polyline fill="none" stroke="${COLORS[e.policy]}" stroke-width="2" points="${
          e.slot_delay_s.map((v, i) => `${x(i)},${y(v)}`).join(" ")}"/>`).join("");
      const axis = `<line x1="${pad}" y1="${h - pad}" x2="${w - pad}" y2="${h - pad}" stroke="#999"/>
        <text x="${pad}" y="${pad - 10}" font-size="11">${ymax.toFixed(1)} s</text>
        <text x="${w - pad}" y="${h - 8}" font-size="11" text-anchor="end">slot</text>`;
      const table = eps.map((e) =>
        `<tr><td style="color:${COLORS[e.policy]}">${e.policy.toUpperCase()}</td><td>${e.mean_delay_s.toFixed(3)}</td><td>${e.migrations}</td></tr>`).join("");
      out.innerHTML = `<svg width="${w}" height="${h}">${axis}${lines}</svg>
        <table><tr><th>policy</th><th>mean slot delay (s)</th><th>migrations</th></tr>${table}</table>`;
    } catch (e) {
      fail(out, e);
    }
  }, 10);
}

await init();
$("alloc-run").onclick = runAllocation;
$("ep-run").onclick = runEpisodes;
for (const id of ["hop-rows", "hop-cols", "hop-kind"]) $(id).onchange = () => drawHops(0);
runAllocation();
drawHops(0);
