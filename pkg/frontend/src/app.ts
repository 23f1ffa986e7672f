/**
 * Browser application: memorize-then-collaborate flow against the session
 * service. Renders the board from ordered state snapshots, mirrors the
 * server's action rules for control enablement, shows robot status and
 * assignment offers/verdicts, and (optionally) a live belief chart.
 *
 * Gestures go through a single dispatcher: one in-flight action at a time,
 * optimistic disable until the ack or rule-violation message arrives, and a
 * retry banner on network failure (the action is never auto-resubmitted).
 */

import { ApiError, CoplanClient } from "./api.js";
import { checkHumanAction } from "./guards.js";
import { BeliefChartModel, boardView, OrderedEventApplier } from "./model.js";
import type {
  ClientEvent,
  Color,
  HumanAction,
  SessionCreated,
  SessionMetrics,
  Snapshot,
} from "./types.js";

const COLOR_SWATCH: Record<Color, string> = {
  green: "#3a9d4e",
  blue: "#3567c4",
  pink: "#d86bb0",
  orange: "#e08a2e",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

class Dispatcher {
  private inFlight = false;

  constructor(
    private readonly client: CoplanClient,
    private readonly sessionId: string,
    private readonly onError: (message: string) => void,
    private readonly onSettled: () => void,
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  /** Submit a gesture unless the local guard or an in-flight action forbids it. */
  async dispatch(snapshot: Snapshot, action: HumanAction): Promise<void> {
    if (this.inFlight) {
      return;
    }
    const verdict = checkHumanAction(snapshot, action);
    if (!verdict.ok) {
      this.onError(`blocked: ${verdict.code}`);
      return;
    }
    this.inFlight = true;
    try {
      await this.client.submit(this.sessionId, action);
    } catch (err) {
      if (err instanceof ApiError) {
        this.onError(`${err.code}: ${err.message}`);
      } else {
        this.onError("network failure; tap again to retry");
      }
    } finally {
      this.inFlight = false;
      this.onSettled();
    }
  }
}

export class App {
  private readonly client: CoplanClient;
  private readonly root: HTMLElement;
  private session: SessionCreated | null = null;
  private snapshot: Snapshot | null = null;
  private dispatcher: Dispatcher | null = null;
  private chart = new BeliefChartModel();
  private chartVisible = false; // off by default in study mode
  private statusLine = "";
  private verdictLog: string[] = [];
  private countdownTimer: number | null = null;

  constructor(baseUrl: string, root: HTMLElement) {
    this.client = new CoplanClient(baseUrl);
    this.root = root;
  }

  // ------------------------------------------------------------- lifecycle

  renderSetup(): void {
    this.root.replaceChildren();
    const panel = el("div", "panel");
    panel.append(el("h1", "", "Pattern collaboration"));
    const form = el("div", "setup-form");
    const label = el("label", "", "Difficulty: ");
    const select = el("select");
    for (const d of ["easy", "medium", "difficult"]) {
      const opt = el("option", "", d);
      opt.value = d;
      select.append(opt);
    }
    select.value = "medium";
    label.append(select);
    const button = el("button", "primary", "Start session");
    button.onclick = async () => {
      button.disabled = true;
      try {
        const created = await this.client.createSession({
          difficulty: select.value,
          seed: Math.floor(Math.random() * 1_000_000),
        });
        await this.begin(created);
      } catch (err) {
        button.disabled = false;
        this.statusLine = err instanceof Error ? err.message : String(err);
        this.renderStatus();
      }
    };
    form.append(label, button);
    panel.append(form);
    this.root.append(panel, el("div", "status"));
  }

  async begin(created: SessionCreated): Promise<void> {
    this.session = created;
    this.dispatcher = new Dispatcher(
      this.client,
      created.session_id,
      (msg) => {
        this.statusLine = msg;
        this.renderStatus();
      },
      () => this.renderStatus(),
    );
    this.renderMemorize(created);
    void this.consumeEvents();
  }

  /** Memorize phase: full pattern with a countdown, then auto-collaborate. */
  renderMemorize(created: SessionCreated): void {
    this.root.replaceChildren();
    const panel = el("div", "panel");
    panel.append(el("h1", "", "Memorize the pattern"));
    const countdown = el("div", "countdown");
    panel.append(countdown);
    const grid = el("div", "pattern-grid");
    const byWorkspace = new Map<number, typeof created.pattern>();
    for (const cell of created.pattern) {
      const row = byWorkspace.get(cell.workspace) ?? [];
      row.push(cell);
      byWorkspace.set(cell.workspace, row);
    }
    for (const [w, cells] of [...byWorkspace.entries()].sort((a, b) => a[0] - b[0])) {
      const row = el("div", "workspace-row");
      row.append(el("span", "workspace-name", `Workspace ${w + 1}`));
      for (const cell of cells.sort((a, b) => a.spot - b.spot)) {
        const spot = el("div", "spot known");
        spot.style.background = COLOR_SWATCH[cell.color];
        spot.textContent = `${cell.spot + 1}`;
        row.append(spot);
      }
      grid.append(row);
    }
    panel.append(grid);
    const skip = el("button", "", "I am ready");
    skip.onclick = () => void this.startCollaboration();
    panel.append(skip);
    this.root.append(panel, el("div", "status"));

    const deadline = Date.now() + created.memorize_deadline_s * 1000;
    const tick = () => {
      const left = Math.max(0, Math.ceil((deadline - Date.now()) / 1000));
      countdown.textContent = `${left} s remaining`;
      if (left <= 0) {
        void this.startCollaboration();
        return;
      }
      this.countdownTimer = window.setTimeout(tick, 250);
    };
    tick();
  }

  private async startCollaboration(): Promise<void> {
    if (this.countdownTimer !== null) {
      clearTimeout(this.countdownTimer);
      this.countdownTimer = null;
    }
    if (!this.session) return;
    await this.client.start(this.session.session_id);
    this.snapshot = await this.client.state(this.session.session_id);
    this.renderBoard();
  }

  // ------------------------------------------------------------ event flow

  private async consumeEvents(): Promise<void> {
    if (!this.session) return;
    const applier = new OrderedEventApplier((event) => this.applyEvent(event));
    try {
      for await (const event of this.client.events(this.session.session_id)) {
        applier.push(event);
      }
    } catch {
      this.statusLine = "event stream dropped; reload to resume";
      this.renderStatus();
    }
  }

  private applyEvent(event: ClientEvent): void {
    switch (event.event) {
      case "state_snapshot":
        this.snapshot = event.state;
        if (event.state.phase === "collaborate") {
          this.renderBoard();
        }
        break;
      case "belief_update":
        this.chart.add(event);
        this.renderChart();
        break;
      case "assignment_offer":
        this.statusLine = `robot asks you to do ${event.task}`;
        this.renderStatus();
        break;
      case "assignment_verdict":
        this.verdictLog.push(
          `${event.task}: ${event.accepted ? "accepted" : "rejected"} (${event.reason})`,
        );
        this.renderStatus();
        break;
      case "robot_action":
        break; // reflected in the next snapshot
      case "session_complete":
        this.renderFinished(event.metrics, event.completed);
        break;
    }
  }

  // -------------------------------------------------------------- rendering

  private renderBoard(): void {
    if (!this.snapshot || !this.session || this.snapshot.phase !== "collaborate") {
      return;
    }
    const view = boardView(this.snapshot);
    this.root.replaceChildren();
    const panel = el("div", "panel");
    panel.append(
      el(
        "h1",
        "",
        `Fill the workspaces (${view.completedCount}/${view.totalTasks})`,
      ),
    );
    if (view.robotAtWorkspace) {
      panel.append(
        el("div", "banner danger", "Robot at the shared workspace: stand clear"),
      );
    } else if (view.robotBusy) {
      panel.append(el("div", "banner", `Robot is working on ${view.robotTask ?? "…"}`));
    } else {
      panel.append(el("div", "banner idle", "Robot is idle"));
    }

    const grid = el("div", "board-grid");
    for (const row of view.workspaces) {
      const rowEl = el("div", "workspace-row");
      const first = row[0];
      rowEl.append(
        el("span", "workspace-name", `Workspace ${(first?.workspace ?? 0) + 1}`),
      );
      for (const spot of row) {
        const cell = el("div", "spot" + (spot.isNextInWorkspace ? " next" : ""));
        cell.append(el("div", "spot-label", spot.label));
        if (spot.placed) {
          const block = el("div", "block" + (spot.misplaced ? " misplaced" : ""));
          block.style.background = COLOR_SWATCH[spot.placed];
          cell.append(block);
        } else if (spot.inProgress) {
          cell.append(el("div", "in-progress", "…"));
        } else {
          for (const color of spot.enabledColors) {
            const chip = el("button", "chip");
            chip.style.background = COLOR_SWATCH[color];
            chip.title = `place ${color} on spot ${spot.label}`;
            chip.onclick = () =>
              void this.dispatch({
                kind: "select_own_task",
                task: spot.task,
                color,
              });
            cell.append(chip);
          }
        }
        if (spot.canAssignToRobot) {
          const assign = el("button", "mini", "→robot");
          assign.onclick = () =>
            void this.dispatch({ kind: "assign_task_to_robot", task: spot.task });
          cell.append(assign);
        }
        if (spot.canReturn) {
          const ret = el("button", "mini danger", "return");
          ret.onclick = () =>
            void this.dispatch({ kind: "return_object", task: spot.task });
          cell.append(ret);
        }
        rowEl.append(cell);
      }
      grid.append(rowEl);
    }
    panel.append(grid);

    const offers = el("div", "offers");
    offers.append(el("h2", "", "Robot's assignments for you"));
    if (view.assignedToYou.length === 0) {
      offers.append(el("p", "dim", "none right now"));
    }
    for (const task of view.assignedToYou) {
      const card = el("div", "offer-card");
      card.append(el("span", "", task));
      const doIt = el("button", "primary", "do it");
      doIt.disabled = !view.canComply || task !== view.assignedToYou[0];
      doIt.onclick = () =>
        void this.dispatch({ kind: "perform_assigned_task", task });
      card.append(doIt);
      offers.append(card);
    }
    for (const task of [...view.awaitingVerdict, ...view.acceptedRequests]) {
      const card = el("div", "offer-card outgoing");
      card.append(el("span", "", `you → robot: ${task}`));
      const cancel = el("button", "mini", "cancel");
      cancel.onclick = () =>
        void this.dispatch({ kind: "cancel_own_assignment", task });
      card.append(cancel);
      offers.append(card);
    }
    panel.append(offers);

    const chartToggle = el("button", "mini", this.chartVisible ? "hide beliefs" : "show beliefs");
    chartToggle.onclick = () => {
      this.chartVisible = !this.chartVisible;
      this.renderBoard();
    };
    panel.append(chartToggle);
    if (this.chartVisible) {
      const canvas = el("canvas", "belief-chart");
      canvas.width = 360;
      canvas.height = 120;
      canvas.id = "belief-chart";
      panel.append(canvas);
    }
    this.root.append(panel, el("div", "status"));
    this.renderStatus();
    this.renderChart();
  }

  private renderChart(): void {
    if (!this.chartVisible) return;
    const canvas = document.getElementById("belief-chart") as HTMLCanvasElement | null;
    if (!canvas) return;
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const series: ["followPreference" | "errorProneness", string][] = [
      ["followPreference", "#3567c4"],
      ["errorProneness", "#c43535"],
    ];
    for (const [metric, stroke] of series) {
      const pts = this.chart.polyline(metric, canvas.width, canvas.height);
      if (pts.length < 2) continue;
      ctx.strokeStyle = stroke;
      ctx.beginPath();
      const [x0, y0] = pts[0]!;
      ctx.moveTo(x0, y0);
      for (const [x, y] of pts.slice(1)) {
        ctx.lineTo(x, y);
      }
      ctx.stroke();
    }
  }

  private renderStatus(): void {
    const status = this.root.querySelector(".status");
    if (!status) return;
    status.replaceChildren();
    if (this.statusLine) {
      status.append(el("div", "status-line", this.statusLine));
    }
    for (const line of this.verdictLog.slice(-3)) {
      status.append(el("div", "verdict-line", line));
    }
  }

  private renderFinished(metrics: SessionMetrics, completed: boolean): void {
    if (!this.session) return;
    this.root.replaceChildren();
    const panel = el("div", "panel");
    panel.append(el("h1", "", completed ? "Pattern complete!" : "Session ended"));
    const table = el("table", "metrics");
    for (const [key, value] of Object.entries(metrics)) {
      const tr = el("tr");
      tr.append(el("td", "", key), el("td", "", String(value)));
      table.append(tr);
    }
    panel.append(table);
    const download = el("button", "", "Download session log");
    download.onclick = async () => {
      await this.client.finish(this.session!.session_id);
      const text = await this.client.log(this.session!.session_id);
      const blob = new Blob([text], { type: "application/jsonl" });
      const a = el("a");
      a.href = URL.createObjectURL(blob);
      a.download = `session-${this.session!.session_id}.jsonl`;
      a.click();
    };
    panel.append(download);
    this.root.append(panel, el("div", "status"));
  }

  private async dispatch(action: HumanAction): Promise<void> {
    if (!this.snapshot || !this.dispatcher) return;
    await this.dispatcher.dispatch(this.snapshot, action);
  }
}

export function mount(): void {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? window.location.origin;
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app element");
  }
  new App(base, root).renderSetup();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount();
}
