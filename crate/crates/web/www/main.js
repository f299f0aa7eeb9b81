import init, { exploreChoice, simulateCity, checkGradients } from "./pkg/streetdcm_web.js";

const CLASSES = ["p_car", "p_grass", "p_road", "p_sky", "p_trees", "p_plants", "p_fence", "p_water"];
const DEFAULTS = [
  { hhcost: 1.0, tt: 0.8, car_count: 3, p_car: 0.1, p_road: 0.3, p_sky: 0.15, p_trees: 0.05 },
  { hhcost: 1.2, tt: 0.6, car_count: 0, p_road: 0.2, p_sky: 0.25, p_trees: 0.25, p_grass: 0.1 },
];

const $ = (id) => document.getElementById(id);
const fmt = (v, d = 3) => (v >= 0 ? "+" : "") + v.toFixed(d);

function showError(e) {
  $("error").textContent = e ? String(e) : "";
}

function slider(parent, key, label, min, max, step, value, onInput) {
  const row = document.createElement("label");
  row.innerHTML = `${label} <input type="range" min="${min}" max="${max}" step="${step}" value="${value}"><output>${value}</output>`;
  const input = row.querySelector("input");
  input.dataset.key = key;
  input.addEventListener("input", () => {
    row.querySelector("output").textContent = input.value;
    onInput();
  });
  parent.appendChild(row);
}

function readAlternative(i) {
  const alt = { proportions: {} };
  for (const input of $(`alt${i}`).querySelectorAll("input")) {
    const v = parseFloat(input.value);
    if (input.dataset.key.startsWith("p_")) alt.proportions[input.dataset.key] = v;
    else alt[input.dataset.key] = v;
  }
  return alt;
}

function bar(value, scale) {
  const w = Math.min(120, Math.abs(value) * scale);
  return `<span class="bar ${value >= 0 ? "pos" : "neg"}" style="width:${w}px"></span>`;
}

function updateChoice() {
  const shift = parseFloat($("shift").value);
  $("shift-out").textContent = shift.toFixed(1);
  let out;
  try {
    out = JSON.parse(exploreChoice(JSON.stringify({ alternatives: [readAlternative(0), readAlternative(1)], shift })));
    showError(null);
  } catch (e) {
    showError(e);
    return;
  }
  const rows = [
    ["Utility", (a) => a.utility.toFixed(4)],
    ["Probability", (a) => a.probability.toFixed(4)],
    [`Utility after shift`, (a) => a.shifted_utility.toFixed(4)],
    [`Probability after shift`, (a) => a.shifted_probability.toFixed(4)],
    ["Unsegmented share", (a) => a.unsegmented.toFixed(3) + (a.renormalised ? " (rescaled)" : "")],
    ["Numeric part", (a) => a.numeric.toFixed(4)],
  ];
  let html = "<tr><th></th><th>A</th><th>B</th></tr>";
  for (const [name, f] of rows) html += `<tr><td>${name}</td><td>${f(out[0])}</td><td>${f(out[1])}</td></tr>`;
  for (let t = 0; t < out[0].contributions.length; t++) {
    const [name, a] = out[0].contributions[t];
    const b = out[1].contributions[t][1];
    html += `<tr><td>${name}</td><td>${fmt(a)} ${bar(a, 200)}</td><td>${fmt(b)} ${bar(b, 200)}</td></tr>`;
  }
  $("choice-table").innerHTML = html;
}

function buildExplorer() {
  for (let i = 0; i < 2; i++) {
    const d = DEFAULTS[i];
    const el = $(`alt${i}`);
    slider(el, "hhcost", "Housing cost", 0, 2, 0.05, d.hhcost, updateChoice);
    slider(el, "tt", "Travel time", 0, 2, 0.05, d.tt, updateChoice);
    slider(el, "car_count", "Cars", 0, 10, 1, d.car_count, updateChoice);
    for (const c of CLASSES) slider(el, c, c, 0, 1, 0.01, d[c] ?? 0, updateChoice);
  }
  $("shift").addEventListener("input", updateChoice);
  updateChoice();
}

let city = null;

function colour(t) {
  const r = Math.round(255 * Math.min(1, 2 * (1 - t)));
  const g = Math.round(255 * Math.min(1, 2 * t));
  return `rgb(${r},${g},80)`;
}

function drawCity() {
  const canvas = $("map");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const n = city.grid_side;
  const cell = canvas.width / n;
  const values = city.zones.map((z) => z.mean_utility);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  for (const z of city.zones) {
    const t = hi > lo ? (z.mean_utility - lo) / (hi - lo) : 0.5;
    ctx.fillStyle = colour(t);
    ctx.globalAlpha = z.low_confidence ? 0.35 : 1;
    // Row 0 is the southern edge of the grid.
    ctx.fillRect(z.col * cell, (n - 1 - z.row) * cell, cell, cell);
  }
  ctx.globalAlpha = 1;
}

function showZone(z) {
  $("zone-title").textContent = `${z.zone_id}: ${z.image_count} images${z.low_confidence ? " (low confidence)" : ""}`;
  let html = `<tr><td>Mean utility</td><td>${z.mean_utility.toFixed(4)}</td><td></td></tr>`;
  html += `<tr><td>Deviation from city</td><td>${fmt(z.total_deviation, 4)}</td><td>${bar(z.total_deviation, 400)}</td></tr>`;
  for (const b of z.bars) html += `<tr><td>${b.label}</td><td>${fmt(b.delta, 4)}</td><td>${bar(b.delta, 400)}</td></tr>`;
  $("zone-table").innerHTML = html;
}

function runCity() {
  const seed = parseInt($("seed").value, 10) || 0;
  const images = parseInt($("images").value, 10) || 1000;
  const grid = parseInt($("grid").value, 10) || 8;
  $("city-status").textContent = "working...";
  setTimeout(() => {
    try {
      const t0 = performance.now();
      city = JSON.parse(simulateCity(seed, images, grid, 5));
      const ms = performance.now() - t0;
      $("city-status").textContent = `${city.zones.length} zones, citywide mean ${city.citywide_mean_utility.toFixed(4)}, ${ms.toFixed(0)} ms`;
      showError(null);
      drawCity();
    } catch (e) {
      $("city-status").textContent = "";
      showError(e);
    }
  }, 10);
}

$("map").addEventListener("click", (ev) => {
  if (!city) return;
  const rect = ev.target.getBoundingClientRect();
  const n = city.grid_side;
  const col = Math.floor(((ev.clientX - rect.left) / rect.width) * n);
  const row = n - 1 - Math.floor(((ev.clientY - rect.top) / rect.height) * n);
  const z = city.zones.find((z) => z.row === row && z.col === col);
  if (z) showZone(z);
});

$("gradients").addEventListener("click", () => {
  try {
    const r = JSON.parse(checkGradients(100, Date.now() % 100000));
    $("gradient-out").textContent = `${r.entries} entries, largest relative error ${r.max_relative_error.toExponential(2)}: ${r.passed ? "pass" : "fail"}`;
  } catch (e) {
    showError(e);
  }
});

await init();
$("simulate").addEventListener("click", runCity);
buildExplorer();
runCity();
