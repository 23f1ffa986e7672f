/**
 * Client-side mirror of the server's action rules.
 *
 * The UI only enables controls this check allows, so a click can never
 * produce a server rejection for precedence or duplication. Check order and
 * rule codes match the engine exactly; shared/legal_action_vectors.json pins
 * both sides to the same verdicts.
 */

import type { Color, HumanAction, Snapshot } from "./types.js";

export type GuardResult = { ok: true } | { ok: false; code: string };

const COLORS: ReadonlySet<string> = new Set(["green", "blue", "pink", "orange"]);

const HUMAN_KINDS: ReadonlySet<string> = new Set([
  "select_own_task",
  "perform_assigned_task",
  "assign_task_to_robot",
  "cancel_own_assignment",
  "return_object",
]);

// Tablet-only actions stay legal while the human is walking.
const ALLOWED_WHILE_BUSY: ReadonlySet<string> = new Set([
  "assign_task_to_robot",
  "cancel_own_assignment",
]);

function beingReturned(snapshot: Snapshot, task: string): boolean {
  const { human, robot } = snapshot.agents;
  return [human, robot].some((a) => a.busy && a.phase === "return" && a.task === task);
}

export function checkHumanAction(snapshot: Snapshot, action: HumanAction): GuardResult {
  if (snapshot.phase !== "collaborate") {
    return { ok: false, code: "wrong_phase" };
  }
  if (!HUMAN_KINDS.has(action.kind)) {
    return { ok: false, code: "unknown_kind" };
  }
  if (!ALLOWED_WHILE_BUSY.has(action.kind) && snapshot.agents.human.busy) {
    return { ok: false, code: "agent_busy" };
  }
  if (!action.task) {
    return { ok: false, code: "unknown_task" };
  }
  const cell = snapshot.board.find((c) => c.task === action.task);
  if (!cell) {
    return { ok: false, code: "unknown_task" };
  }

  if (action.kind === "cancel_own_assignment") {
    if (
      snapshot.awaiting_verdict.includes(action.task) ||
      snapshot.accepted_requests.includes(action.task)
    ) {
      return { ok: true };
    }
    if (cell.in_progress) {
      return { ok: false, code: "task_in_progress" };
    }
    return { ok: false, code: "assignment_not_pending" };
  }

  if (action.kind === "return_object") {
    if (!cell.misplaced) {
      return { ok: false, code: "not_misplaced" };
    }
    if (beingReturned(snapshot, action.task)) {
      return { ok: false, code: "task_in_progress" };
    }
    return { ok: true };
  }

  // The remaining kinds target a task that must be performable right now.
  if (cell.completed) {
    return { ok: false, code: "task_completed" };
  }
  if (cell.in_progress) {
    return { ok: false, code: "task_in_progress" };
  }
  if (cell.misplaced || cell.placed !== null) {
    return { ok: false, code: "spot_occupied" };
  }
  const claimedByRobotSide =
    snapshot.awaiting_verdict.includes(action.task) ||
    snapshot.accepted_requests.includes(action.task);
  if (!cell.selectable && !claimedByRobotSide) {
    return { ok: false, code: "precedence_violation" };
  }

  if (action.kind === "assign_task_to_robot") {
    if (claimedByRobotSide) {
      return { ok: false, code: "already_assigned" };
    }
    return { ok: true };
  }
  if (action.kind === "perform_assigned_task") {
    if (!snapshot.assigned_to_you.includes(action.task)) {
      return { ok: false, code: "not_assigned" };
    }
    return { ok: true };
  }
  // select_own_task
  if (action.color != null && !COLORS.has(action.color)) {
    return { ok: false, code: "unknown_color" };
  }
  return { ok: true };
}

/** Colors the UI may offer for a spot: the variant's printed options. */
export function colorChoices(cell: { options: Color[] }): Color[] {
  return cell.options;
}
