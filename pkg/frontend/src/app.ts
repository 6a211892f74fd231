/** Single-page dashboard: Setup + Live tab and a Debug log tab. */

import { ApiClient, ApiError, type LogLevel } from "./api.js";
import { defaultForm, formToConfig, validateForm, type CampaignFormModel } from "./form.js";
import { openStream, type StreamHandle } from "./sse.js";
import { CampaignViewStore, scaleToCanvas, type SeriesPoint } from "./stores.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const store = new CampaignViewStore();
let stream: StreamHandle | null = null;
let currentCampaign: string | null = null;
let levelFilter: LogLevel | "ALL" = "ALL";

function apiBase(): string {
  return ($("api-base") as HTMLInputElement).value.replace(/\/+$/, "");
}

function api(): ApiClient {
  return new ApiClient(apiBase());
}

// ---------------------------------------------------------------------------
// tabs

function showTab(name: "live" | "debug"): void {
  $("tab-live").classList.toggle("active", name === "live");
  $("tab-debug").classList.toggle("active", name === "debug");
  $("panel-live").style.display = name === "live" ? "" : "none";
  $("panel-debug").style.display = name === "debug" ? "" : "none";
}

// ---------------------------------------------------------------------------
// form

function readForm(): CampaignFormModel {
  const num = (id: string) => Number(($(id) as HTMLInputElement).value);
  const text = (id: string) => ($(id) as HTMLInputElement).value;
  const checked = (id: string) => ($(id) as HTMLInputElement).checked;
  const target = text("f-target-accuracy").trim();
  return {
    ...defaultForm(),
    rounds: num("f-rounds"),
    numClients: num("f-num-clients"),
    minFitClients: num("f-min-fit"),
    evalMode: text("f-eval-mode") as "server" | "client",
    validationPath: text("f-validation-path"),
    validatorFraction: num("f-validator-fraction"),
    fineTuneOnly: checked("f-fine-tune"),
    pointsPerClass: num("f-points-per-class"),
    classDescriptions: text("f-classes")
      .split("\n")
      .map((line) => line.trim())
      .filter((line) => line !== ""),
    inputDim: num("f-input-dim"),
    hiddenDim: num("f-hidden-dim"),
    learningRate: num("f-lr"),
    momentum: num("f-momentum"),
    batchSize: num("f-batch"),
    targetAccuracy: target === "" ? null : Number(target),
    seed: num("f-seed"),
    pretrainedPath: text("f-pretrained"),
    advancedJson: ($("f-advanced") as HTMLTextAreaElement).value,
  };
}

function showFormErrors(problems: string[]): void {
  const box = $("form-errors");
  box.textContent = problems.join("\n");
  box.style.display = problems.length ? "" : "none";
}

async function submitCampaign(): Promise<void> {
  const form = readForm();
  const problems = validateForm(form);
  showFormErrors(problems);
  if (problems.length) return;
  try {
    const id = await api().createCampaign(formToConfig(form));
    openCampaign(id);
  } catch (err) {
    if (err instanceof ApiError) showFormErrors([err.message, ...err.violations]);
    else showFormErrors([String(err)]);
  }
}

// ---------------------------------------------------------------------------
// live view

function openCampaign(id: string): void {
  stream?.close();
  currentCampaign = id;
  $("live-campaign-id").textContent = id;
  store.reset();
  store.summary = null;
  stream = openStream(apiBase(), id, (obj) => store.apply(obj), {
    onReset: () => store.reset(),
    onBackfill: (rounds) => store.backfill(rounds),
  });
  showTab("live");
  void refreshCampaignList();
}

function drawChart(canvasId: string, points: SeriesPoint[], color: string, label: string): void {
  const canvas = $(canvasId) as unknown as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#8b949e";
  ctx.font = "11px sans-serif";
  ctx.fillText(label, 8, 14);
  if (points.length === 0) return;
  const scaled = scaleToCanvas(points, width, height);
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  scaled.forEach((p, i) => (i === 0 ? ctx.moveTo(p.px, p.py) : ctx.lineTo(p.px, p.py)));
  ctx.stroke();
  ctx.fillStyle = color;
  for (const p of scaled) {
    ctx.beginPath();
    ctx.arc(p.px, p.py, 2.5, 0, Math.PI * 2);
    ctx.fill();
  }
  const last = points[points.length - 1];
  ctx.fillStyle = "#c9d1d9";
  ctx.fillText(`round ${last.x}: ${last.y.toFixed(4)}`, width - 150, 14);
}

function renderLive(): void {
  const summary = store.summary;
  $("live-status").textContent = store.status();
  $("live-status").className = `status status-${store.status().toLowerCase()}`;
  $("live-round").textContent = summary
    ? `${summary.current_round}/${summary.rounds_total}`
    : "-";
  $("live-clients").textContent = summary ? String(summary.connected_clients) : "-";
  drawChart("chart-accuracy", store.accuracySeries(), "#3fb950", "accuracy vs round");
  drawChart("chart-loss", store.lossSeries(), "#58a6ff", "loss vs round");
  renderDebug();
}

function renderDebug(): void {
  const rows = store
    .filteredEvents(levelFilter)
    .map(
      (e) =>
        `<tr><td>${new Date(e.timestamp_ms).toLocaleTimeString()}</td>` +
        `<td class="lvl-${e.level}">${e.level}</td>` +
        `<td>${e.round ?? ""}</td><td>${escapeHtml(e.message)}</td></tr>`,
    )
    .join("");
  $("debug-rows").innerHTML = rows;
}

function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (c) => `&#${c.charCodeAt(0)};`);
}

async function abortCurrent(): Promise<void> {
  if (!currentCampaign) return;
  await api().abort(currentCampaign);
}

// ---------------------------------------------------------------------------
// campaign list

async function refreshCampaignList(): Promise<void> {
  try {
    const summaries = await api().listCampaigns();
    $("campaign-list").innerHTML = summaries
      .map(
        (s) =>
          `<li><a href="#" data-id="${s.campaign_id}">${s.campaign_id}</a>` +
          ` <span class="status status-${s.status.toLowerCase()}">${s.status}</span></li>`,
      )
      .join("");
    for (const link of $("campaign-list").querySelectorAll("a")) {
      link.addEventListener("click", (ev) => {
        ev.preventDefault();
        openCampaign((ev.target as HTMLElement).dataset["id"] as string);
      });
    }
  } catch {
    // server not reachable yet; the refresh button retries
  }
}

// ---------------------------------------------------------------------------
// wiring

export function start(): void {
  store.onChange = renderLive;
  $("btn-submit").addEventListener("click", () => void submitCampaign());
  $("btn-abort").addEventListener("click", () => void abortCurrent());
  $("btn-refresh").addEventListener("click", () => void refreshCampaignList());
  $("tab-live").addEventListener("click", () => showTab("live"));
  $("tab-debug").addEventListener("click", () => showTab("debug"));
  for (const chip of document.querySelectorAll<HTMLElement>(".chip")) {
    chip.addEventListener("click", () => {
      levelFilter = (chip.dataset["level"] as LogLevel | "ALL") ?? "ALL";
      for (const other of document.querySelectorAll(".chip")) {
        other.classList.toggle("active", other === chip);
      }
      renderDebug();
    });
  }
  showTab("live");
  void refreshCampaignList();
}

if (typeof document !== "undefined" && document.getElementById("btn-submit")) {
  start();
}
