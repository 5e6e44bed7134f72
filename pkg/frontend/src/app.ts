import { isReachable, predict, ServiceError, ServiceUnreachableError } from "./api";
import { CSV_HEADER, HistoryStore, toCsv } from "./history";
import { renderComposite } from "./overlay";
import { DECISIONS, type CaseRecord, type Decision, type PredictionResponse } from "./types";

export interface AppOptions {
  /** Service origin; empty string targets the page's own origin. */
  baseUrl?: string;
  /** Injectable for tests; defaults to window.localStorage. */
  storage?: Storage;
  /** Injectable clock for deterministic timestamps in tests. */
  now?: () => Date;
}

export interface AppHandle {
  /** Submit one file; uploads queue behind any in-flight prediction. */
  submit(file: File): Promise<void>;
  /** Current CSV export of the session history. */
  exportCsv(): string;
  /** Re-check service reachability and update the offline banner. */
  retryConnection(): Promise<void>;
  readonly root: HTMLElement;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
  testId?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  if (testId) node.dataset.testid = testId;
  return node;
}

function formatPercent(probability: number): string {
  return `${(probability * 100).toFixed(1)}%`;
}

function objectUrl(file: Blob): string {
  try {
    return URL.createObjectURL(file);
  } catch {
    return ""; // not implemented in non-browser test environments
  }
}

/** Build the single-page review client inside `root`. */
export function createApp(root: HTMLElement, options: AppOptions = {}): AppHandle {
  const baseUrl = options.baseUrl ?? "";
  const storage = options.storage ?? window.localStorage;
  const now = options.now ?? (() => new Date());
  const history = new HistoryStore(storage);

  // --- static layout -------------------------------------------------------
  root.innerHTML = "";

  const offlineBanner = el("div", "banner banner-offline hidden", "offline-banner");
  offlineBanner.textContent = "Inference service unreachable. ";
  const retryButton = el("button", "retry", "retry-button");
  retryButton.textContent = "Retry";
  offlineBanner.appendChild(retryButton);

  const errorBanner = el("div", "banner banner-error hidden", "error-banner");

  const uploadSection = el("section", "upload");
  const fileInput = el("input", "file-input", "file-input");
  fileInput.type = "file";
  fileInput.accept = "image/png,image/jpeg";
  const statusLine = el("p", "status", "status-line");
  uploadSection.append(fileInput, statusLine);

  const card = el("section", "result-card hidden", "result-card");
  const cardTitle = el("h2", "filename", "case-filename");
  const labelLine = el("p", "label", "predicted-label");
  const bars = el("div", "bars");
  const barRows = new Map<string, { fill: HTMLElement; text: HTMLElement }>();
  for (const cls of ["negative", "positive"]) {
    const row = el("div", `bar-row bar-${cls}`, `bar-${cls}`);
    const name = el("span", "bar-name");
    name.textContent = cls;
    const track = el("div", "bar-track");
    const fill = el("div", "bar-fill", `bar-fill-${cls}`);
    track.appendChild(fill);
    const text = el("span", "bar-value", `bar-value-${cls}`);
    row.append(name, track, text);
    bars.appendChild(row);
    barRows.set(cls, { fill, text });
  }
  const latencyLine = el("p", "latency", "latency-line");

  const preview = el("div", "preview");
  const rawImage = el("img", "preview-raw", "preview-raw");
  const overlayImage = el("img", "preview-overlay", "preview-overlay");
  const compositeCanvas = el("canvas", "preview-composite", "preview-composite");
  compositeCanvas.classList.add("hidden");
  preview.append(rawImage, overlayImage, compositeCanvas);

  const overlayControls = el("div", "overlay-controls");
  const overlayToggle = el("input", "overlay-toggle", "overlay-toggle");
  overlayToggle.type = "checkbox";
  const alphaSlider = el("input", "alpha-slider", "alpha-slider");
  alphaSlider.type = "range";
  alphaSlider.min = "0";
  alphaSlider.max = "1";
  alphaSlider.step = "0.05";
  alphaSlider.value = "0.5";
  overlayControls.append(overlayToggle, alphaSlider);

  const decisionSelect = el("select", "decision", "decision-select");
  for (const decision of DECISIONS) {
    const option = document.createElement("option");
    option.value = decision;
    option.textContent = decision;
    decisionSelect.appendChild(option);
  }

  card.append(cardTitle, labelLine, bars, latencyLine, preview, overlayControls, decisionSelect);

  const historySection = el("section", "history");
  const historyList = el("ul", "history-list", "history-list");
  const exportButton = el("button", "export", "export-button");
  exportButton.textContent = "Export CSV";
  const clearButton = el("button", "clear", "clear-button");
  clearButton.textContent = "Clear history";
  historySection.append(historyList, exportButton, clearButton);

  root.append(offlineBanner, errorBanner, uploadSection, card, historySection);

  // --- state ---------------------------------------------------------------
  let currentIndex: number | null = null;
  let queue: Promise<void> = Promise.resolve();

  function renderHistory(): void {
    historyList.innerHTML = "";
    for (const record of history.load()) {
      const item = document.createElement("li");
      item.textContent =
        `${record.timestamp} ${record.filename}: ${record.label} ` +
        `(p+ ${formatPercent(record.probabilityPositive)}) [${record.decision}]`;
      historyList.appendChild(item);
    }
  }

  function applyOverlayState(): void {
    const enabled = overlayToggle.checked && !overlayToggle.disabled;
    const alpha = Number(alphaSlider.value);
    // CSS compositing drives the live preview; at alpha 0 or toggled off the
    // overlay contributes nothing and the untouched raw preview shows through.
    overlayImage.style.opacity = enabled ? String(alpha) : "0";
    if (enabled && rawImage.src && overlayImage.src) {
      const drawn = renderComposite(compositeCanvas, rawImage, overlayImage, alpha);
      compositeCanvas.classList.toggle("hidden", !drawn);
    } else {
      compositeCanvas.classList.add("hidden");
    }
  }

  function showResult(filename: string, response: PredictionResponse): void {
    errorBanner.classList.add("hidden");
    cardTitle.textContent = filename;
    labelLine.textContent = `Predicted: ${response.label}`;
    for (const [cls, row] of barRows) {
      const probability = response.probabilities[cls] ?? 0;
      row.fill.style.width = formatPercent(probability);
      row.text.textContent = formatPercent(probability);
    }
    latencyLine.textContent = `latency: ${response.latency_ms.toFixed(1)} ms`;
    overlayToggle.disabled = response.heatmap === null;
    overlayToggle.checked = false;
    overlayImage.src = response.heatmap
      ? `data:image/png;base64,${response.heatmap}`
      : "";
    applyOverlayState();
    card.classList.remove("hidden");
  }

  function showError(message: string): void {
    card.classList.add("hidden");
    errorBanner.textContent = message;
    errorBanner.classList.remove("hidden");
  }

  async function handleFile(file: File): Promise<void> {
    statusLine.textContent = `predicting ${file.name}…`;
    try {
      const response = await predict(file, file.name, baseUrl);
      offlineBanner.classList.add("hidden");
      const record: CaseRecord = {
        timestamp: now().toISOString(),
        filename: file.name,
        label: response.label,
        probabilityPositive: response.probabilities["positive"] ?? 0,
        decision: "undecided",
      };
      currentIndex = history.add(record);
      decisionSelect.value = "undecided";
      rawImage.src = objectUrl(file);
      showResult(file.name, response);
      renderHistory();
      statusLine.textContent = "";
    } catch (error) {
      if (error instanceof ServiceUnreachableError) {
        offlineBanner.classList.remove("hidden");
        statusLine.textContent = "";
        return;
      }
      if (error instanceof ServiceError) {
        showError(`${error.code}: ${error.message}`);
        statusLine.textContent = "";
        return;
      }
      throw error;
    }
  }

  function submit(file: File): Promise<void> {
    // at most one in-flight prediction; later uploads wait their turn
    queue = queue.then(() => handleFile(file));
    return queue;
  }

  async function retryConnection(): Promise<void> {
    const reachable = await isReachable(baseUrl);
    offlineBanner.classList.toggle("hidden", reachable);
  }

  // --- events --------------------------------------------------------------
  fileInput.addEventListener("change", () => {
    const file = fileInput.files?.[0];
    if (file) void submit(file);
  });
  retryButton.addEventListener("click", () => void retryConnection());
  overlayToggle.addEventListener("change", applyOverlayState);
  alphaSlider.addEventListener("input", applyOverlayState);
  decisionSelect.addEventListener("change", () => {
    if (currentIndex !== null) {
      history.setDecision(currentIndex, decisionSelect.value as Decision);
      renderHistory();
    }
  });
  exportButton.addEventListener("click", () => {
    const blob = new Blob([toCsv(history.load())], { type: "text/csv" });
    const anchor = document.createElement("a");
    anchor.href = objectUrl(blob);
    anchor.download = "fluorodx-history.csv";
    anchor.click();
  });
  clearButton.addEventListener("click", () => {
    history.clear();
    currentIndex = null;
    renderHistory();
  });

  renderHistory();

  return {
    submit,
    exportCsv: () => toCsv(history.load()),
    retryConnection,
    root,
  };
}

export { CSV_HEADER };
