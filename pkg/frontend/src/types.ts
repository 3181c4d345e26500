/** Wire types for the imagechat HTTP API. */

export type StyleClass = "positive" | "neutral" | "negative";

export interface StyleTrait {
  name: string;
  class: StyleClass;
}

export interface Catalog {
  styles: StyleTrait[];
  images: string[];
}

export type ModelKind = "retrieval" | "generative";

export interface StartSessionRequest {
  start_session: {
    image_id: string;
    style_model: string;
    style_human?: string;
    model_kind: ModelKind;
  };
}

export interface StartSessionResponse {
  session_id: string;
}

export interface SessionTurnRequest {
  session_id: string;
  text: string;
  model_kind?: ModelKind;
  n_candidates?: number;
}

export interface ChatReply {
  text: string;
  score_or_logprob: number;
  candidates_considered: number;
  session_id?: string;
}

export interface StatelessChatRequest {
  image_id: string;
  style: string;
  history: string[];
  model_kind: ModelKind;
  n_candidates?: number;
}

export interface RankRequest {
  context: {
    image_id: string;
    style: string;
    history: string[];
  };
  candidates: string[];
}

export interface RankedCandidate {
  text: string;
  score: number;
}

export interface RankResponse {
  ranked: RankedCandidate[];
}

export interface TranscriptTurn {
  speaker: "human" | "model";
  text: string;
}

export interface SessionExport {
  session_id: string;
  image_id: string;
  style_human: string | null;
  style_model: string;
  model_kind: ModelKind;
  transcript: TranscriptTurn[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
