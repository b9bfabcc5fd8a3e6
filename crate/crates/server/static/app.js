"use strict";

// Digits toggle AUs in grid order; '-' and '=' cover the 11th and 12th.
const KEYS = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "0", "-", "="];

const state = {
  annotator: localStorage.getItem("annotator") || "",
  frame: null,
  schema: [],
  labels: {},
  busy: false,
};

const $ = (id) => document.getElementById(id);

function setStatus(text) {
  $("status").textContent = text;
}

function renderGrid() {
  const grid = $("grid");
  grid.innerHTML = "";
  state.schema.forEach((entry, i) => {
    const label = state.labels[entry.au_id];
    const row = document.createElement("div");
    row.className = "au" + (label ? " on" : "");
    row.dataset.au = entry.au_id;
    const max = entry.au_id === 43 ? 1 : 5;
    row.innerHTML =
      `<span class="key">${KEYS[i] || ""}</span>` +
      `<input type="checkbox" ${label ? "checked" : ""}>` +
      `<span>AU${entry.au_id} ${entry.description}</span>` +
      `<input type="number" min="0" max="${max}" placeholder="int" style="width:3.5rem" ` +
      `${label ? "" : "disabled"} value="${label && label.intensity != null ? label.intensity : ""}">`;
    row.querySelector("input[type=checkbox]").addEventListener("change", () => toggle(entry.au_id));
    row.querySelector("input[type=number]").addEventListener("change", (ev) => {
      const v = ev.target.value;
      if (state.labels[entry.au_id]) {
        state.labels[entry.au_id].intensity = v === "" ? null : Number(v);
      }
    });
    grid.appendChild(row);
  });
  $("submit").disabled = !state.frame || state.busy;
}

function toggle(au) {
  if (state.labels[au]) {
    delete state.labels[au];
  } else {
    state.labels[au] = { present: true, intensity: null };
  }
  renderGrid();
}

async function loadNext() {
  state.annotator = $("annotator").value.trim();
  if (!state.annotator) {
    setStatus("enter an annotator id");
    return;
  }
  localStorage.setItem("annotator", state.annotator);
  try {
    const resp = await fetch(`/api/frames/next?annotator=${encodeURIComponent(state.annotator)}`);
    if (resp.status === 204) {
      state.frame = null;
      state.labels = {};
      $("image").removeAttribute("src");
      $("frame-id").textContent = "";
      setStatus("queue empty: every frame is annotated");
    } else if (resp.ok) {
      const next = await resp.json();
      state.frame = next;
      state.schema = next.au_schema;
      state.labels = {};
      $("image").src = next.image_url;
      $("frame-id").textContent = next.frame_id;
      setStatus("");
    } else {
      setStatus(`error ${resp.status}: ${(await resp.json()).error}`);
    }
  } catch (err) {
    setStatus(`network error, press Load next to retry (${err})`);
  }
  renderGrid();
  refreshPanels();
}

async function submit() {
  if (!state.frame || state.busy) {
    return;
  }
  state.busy = true;
  renderGrid();
  const labels = {};
  for (const [au, l] of Object.entries(state.labels)) {
    labels[au] = l.intensity == null ? { present: true } : { present: true, intensity: l.intensity };
  }
  const body = { frame_id: state.frame.frame_id, annotator_id: state.annotator, labels };
  try {
    const resp = await fetch("/api/annotations", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    state.busy = false;
    if (resp.status === 200 || resp.status === 201) {
      await loadNext();
      return;
    }
    const err = (await resp.json()).error;
    setStatus(`error ${resp.status}: ${err}`);
    const m = /AU (\d+)/.exec(err);
    if (resp.status === 422 && m) {
      const row = document.querySelector(`.au[data-au="${m[1]}"]`);
      if (row) row.classList.add("invalid");
    }
  } catch (err) {
    state.busy = false;
    setStatus(`network error, labels kept; press Enter to retry (${err})`);
  }
  renderGrid();
}

async function refreshPanels() {
  try {
    const progress = await (await fetch("/api/progress")).json();
    $("progress").textContent = JSON.stringify(progress, null, 2);
    const table = await (await fetch("/api/analysis/association")).json();
    renderChart(table);
  } catch (err) {
    setStatus(`could not refresh progress (${err})`);
  }
}

function renderChart(table) {
  const chart = $("chart");
  chart.innerHTML = "";
  const byAu = new Map();
  for (const cell of table.cells) {
    if (!byAu.has(cell.au_id)) byAu.set(cell.au_id, []);
    byAu.get(cell.au_id).push(cell);
  }
  if (table.cells.every((c) => c.denominator === 0)) {
    chart.textContent = "no annotated frames near a pain report yet";
    return;
  }
  for (const [au, cells] of byAu) {
    const group = document.createElement("div");
    group.className = "group";
    const bars = document.createElement("div");
    bars.className = "bars";
    for (const c of cells) {
      const bar = document.createElement("div");
      bar.className = `bar ${c.category}`;
      bar.style.height = `${c.percentage == null ? 0 : c.percentage * 0.8}px`;
      bar.title = `${c.category}: ${c.percentage == null ? "n/a" : c.percentage + "%"} (${c.present_count}/${c.denominator})`;
      bars.appendChild(bar);
    }
    group.appendChild(bars);
    group.append(`AU${au}`);
    chart.appendChild(group);
  }
}

document.addEventListener("keydown", (ev) => {
  if (ev.target.tagName === "INPUT" && ev.target.id === "annotator") {
    if (ev.key === "Enter") loadNext();
    return;
  }
  if (ev.key === "Enter") {
    ev.preventDefault();
    submit();
    return;
  }
  const i = KEYS.indexOf(ev.key);
  if (i >= 0 && state.frame && state.schema[i] && ev.target.type !== "number") {
    toggle(state.schema[i].au_id);
  }
});

$("annotator").value = state.annotator;
$("load").addEventListener("click", loadNext);
$("submit").addEventListener("click", submit);
refreshPanels();
