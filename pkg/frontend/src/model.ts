/**
 * View-model layer: ordered event application, the board derived from
 * snapshots with per-control enablement, and the belief chart series.
 * No DOM access here; app.ts renders these, tests drive them directly.
 */

import { checkHumanAction } from "./guards.js";
import type {
  BeliefUpdateEvent,
  BoardCell,
  ClientEvent,
  Color,
  Snapshot,
} from "./types.js";

/**
 * Applies events strictly in sequence order: late arrivals are buffered,
 * duplicates dropped, so every event n renders before any event n+1.
 */
export class OrderedEventApplier {
  private nextSeq: number;
  private buffered = new Map<number, ClientEvent>();

  constructor(
    private readonly handler: (event: ClientEvent) => void,
    firstSeq = 0,
  ) {
    this.nextSeq = firstSeq;
  }

  get expectedSeq(): number {
    return this.nextSeq;
  }

  get bufferedCount(): number {
    return this.buffered.size;
  }

  push(event: ClientEvent): void {
    if (event.seq < this.nextSeq) {
      return; // duplicate delivery (at-least-once stream)
    }
    this.buffered.set(event.seq, event);
    for (;;) {
      const next = this.buffered.get(this.nextSeq);
      if (next === undefined) {
        break;
      }
      this.buffered.delete(this.nextSeq);
      this.nextSeq += 1;
      this.handler(next);
    }
  }
}

export interface SpotView {
  task: string;
  workspace: number;
  spot: number;
  label: string;
  placed: Color | null;
  completed: boolean;
  misplaced: boolean;
  inProgress: boolean;
  /** colors the player may tap to place here (empty = spot locked) */
  enabledColors: Color[];
  canAssignToRobot: boolean;
  canReturn: boolean;
  isNextInWorkspace: boolean;
}

export interface BoardView {
  workspaces: SpotView[][];
  assignedToYou: string[];
  awaitingVerdict: string[];
  acceptedRequests: string[];
  canComply: boolean;
  humanBusy: boolean;
  robotBusy: boolean;
  robotTask: string | null;
  robotAtWorkspace: boolean;
  completedCount: number;
  totalTasks: number;
}

/** Board state with every control's enablement mirrored from the guards. */
export function boardView(snapshot: Snapshot): BoardView {
  const byWorkspace = new Map<number, BoardCell[]>();
  for (const cell of snapshot.board) {
    const row = byWorkspace.get(cell.workspace) ?? [];
    row.push(cell);
    byWorkspace.set(cell.workspace, row);
  }
  const workspaces: SpotView[][] = [];
  for (const w of [...byWorkspace.keys()].sort((a, b) => a - b)) {
    const cells = (byWorkspace.get(w) ?? []).sort((a, b) => a.spot - b.spot);
    const nextSpot = cells.find((c) => !c.completed && c.placed === null);
    workspaces.push(
      cells.map((cell) => {
        const selectOk = checkHumanAction(snapshot, {
          kind: "select_own_task",
          task: cell.task,
        }).ok;
        const assignOk = checkHumanAction(snapshot, {
          kind: "assign_task_to_robot",
          task: cell.task,
        }).ok;
        const returnOk = checkHumanAction(snapshot, {
          kind: "return_object",
          task: cell.task,
        }).ok;
        return {
          task: cell.task,
          workspace: cell.workspace,
          spot: cell.spot,
          label: `${cell.spot + 1}`,
          placed: cell.placed,
          completed: cell.completed,
          misplaced: cell.misplaced,
          inProgress: cell.in_progress,
          enabledColors: selectOk ? cell.options : [],
          canAssignToRobot: assignOk,
          canReturn: returnOk,
          isNextInWorkspace: nextSpot?.task === cell.task,
        };
      }),
    );
  }
  const firstAssigned = snapshot.assigned_to_you[0];
  const canComply =
    firstAssigned !== undefined &&
    checkHumanAction(snapshot, { kind: "perform_assigned_task", task: firstAssigned }).ok;
  const robot = snapshot.agents.robot;
  return {
    workspaces,
    assignedToYou: snapshot.assigned_to_you,
    awaitingVerdict: snapshot.awaiting_verdict,
    acceptedRequests: snapshot.accepted_requests,
    canComply,
    humanBusy: snapshot.agents.human.busy,
    robotBusy: robot.busy,
    robotTask: robot.task,
    robotAtWorkspace: robot.busy && (robot.phase === "place" || robot.phase === "return"),
    completedCount: snapshot.completed_count,
    totalTasks: snapshot.total_tasks,
  };
}

export interface BeliefPoint {
  seq: number;
  followPreference: number;
  errorProneness: number;
}

/** Time series for the live belief chart; x advances strictly by sequence. */
export class BeliefChartModel {
  readonly points: BeliefPoint[] = [];

  add(event: BeliefUpdateEvent): void {
    const last = this.points[this.points.length - 1];
    if (last !== undefined && event.seq <= last.seq) {
      throw new Error(
        `belief chart sequence must increase: got ${event.seq} after ${last.seq}`,
      );
    }
    this.points.push({
      seq: event.seq,
      followPreference: event.p_f,
      errorProneness: event.p_e,
    });
  }

  /** Scaled polyline coordinates for a width x height canvas. */
  polyline(metric: "followPreference" | "errorProneness", width: number, height: number): [number, number][] {
    const n = this.points.length;
    if (n === 0) {
      return [];
    }
    const step = n > 1 ? width / (n - 1) : 0;
    return this.points.map((p, i) => [i * step, height - p[metric] * height]);
  }
}
