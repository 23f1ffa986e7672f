/** Wire types for the session service. Field names match the JSON schema. */

export type Color = "green" | "blue" | "pink" | "orange";

export type Phase = "memorize" | "collaborate" | "finished";

export interface PatternCell {
  workspace: number;
  spot: number;
  color: Color;
}

export interface VariantCell {
  workspace: number;
  spot: number;
  options: Color[];
}

export interface SessionCreated {
  session_id: string;
  phase: Phase;
  difficulty: string;
  memorize_deadline_s: number;
  pattern: PatternCell[];
  variant: VariantCell[];
  workspaces: number;
  spots_per_workspace: number;
  time_scale: number;
}

export interface BoardCell {
  task: string;
  workspace: number;
  spot: number;
  options: Color[];
  placed: Color | null;
  completed: boolean;
  misplaced: boolean;
  selectable: boolean;
  in_progress: boolean;
}

export interface AgentStatus {
  busy: boolean;
  task: string | null;
  phase: "fetch" | "place" | "return" | null;
}

export interface Snapshot {
  phase: Phase;
  t: number;
  board: BoardCell[];
  agents: { human: AgentStatus; robot: AgentStatus };
  assigned_to_you: string[];
  awaiting_verdict: string[];
  accepted_requests: string[];
  completed_count: number;
  total_tasks: number;
  p_f: number;
  p_e: number;
}

export type HumanActionKind =
  | "select_own_task"
  | "perform_assigned_task"
  | "assign_task_to_robot"
  | "cancel_own_assignment"
  | "return_object";

export interface HumanAction {
  kind: HumanActionKind;
  task: string | null;
  color?: Color | null;
}

export interface SubmitAck {
  applied: boolean;
  kind: string;
  task: string | null;
  events: unknown[];
}

export interface ProtocolFailure {
  code: string;
  message: string;
}

export interface SessionMetrics {
  n_wrong_h: number;
  n_assign_h_to_r: number;
  n_assign_r_to_h: number;
  d_h_m: number;
  d_r_m: number;
  n_tasks_h: number;
  n_tasks_r: number;
  t_total_min: number;
}

interface ClientEventBase {
  seq: number;
  session_id: string;
}

export interface StateSnapshotEvent extends ClientEventBase {
  event: "state_snapshot";
  state: Snapshot;
}

export interface RobotActionEvent extends ClientEventBase {
  event: "robot_action";
  kind: string;
  task: string | null;
  outcome: string | null;
  t: number;
}

export interface AssignmentOfferEvent extends ClientEventBase {
  event: "assignment_offer";
  task: string;
  t: number;
}

export interface AssignmentVerdictEvent extends ClientEventBase {
  event: "assignment_verdict";
  task: string;
  accepted: boolean;
  reason: string;
}

export interface BeliefUpdateEvent extends ClientEventBase {
  event: "belief_update";
  t: number;
  obs: string;
  p_f: number;
  p_e: number;
  preference_pmf: number[];
  performance_pmf: number[];
}

export interface SessionCompleteEvent extends ClientEventBase {
  event: "session_complete";
  completed: boolean;
  reason: string;
  metrics: SessionMetrics;
}

export type ClientEvent =
  | StateSnapshotEvent
  | RobotActionEvent
  | AssignmentOfferEvent
  | AssignmentVerdictEvent
  | BeliefUpdateEvent
  | SessionCompleteEvent;
