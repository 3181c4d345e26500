/** Chat session state: transcript, request lifecycle, export and replay.
 *
 * The store keeps model replies exactly as the server sent them (the
 * string out of the /api/chat JSON payload, unmodified), so what the
 * view displays is byte-for-byte the server's response.
 */

import type { ApiClient } from "./api";
import type {
  ChatReply,
  ModelKind,
  SessionExport,
  TranscriptTurn,
} from "./types";

export interface ChatMessage extends TranscriptTurn {
  /** Present on model turns: score (retrieval) or logprob (generative). */
  scoreOrLogprob?: number;
  candidatesConsidered?: number;
}

export type StoreListener = () => void;

export interface ReplayMismatch {
  turnIndex: number;
  expected: string;
  actual: string;
}

export interface ReplayResult {
  identical: boolean;
  mismatches: ReplayMismatch[];
  sessionId: string;
}

export class ChatStore {
  private readonly api: ApiClient;
  private listeners: StoreListener[] = [];

  sessionId: string | null = null;
  imageId: string | null = null;
  styleModel: string | null = null;
  modelKind: ModelKind = "retrieval";
  messages: ChatMessage[] = [];
  pending = false;
  lastError: string | null = null;

  constructor(api: ApiClient) {
    this.api = api;
  }

  subscribe(listener: StoreListener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** True when a send would be accepted right now. */
  get canSend(): boolean {
    return this.sessionId !== null && !this.pending;
  }

  async start(
    imageId: string,
    styleModel: string,
    modelKind: ModelKind,
  ): Promise<void> {
    if (this.pending) throw new Error("request already in flight");
    this.pending = true;
    this.lastError = null;
    this.notify();
    try {
      const res = await this.api.startSession({
        start_session: {
          image_id: imageId,
          style_model: styleModel,
          model_kind: modelKind,
        },
      });
      this.sessionId = res.session_id;
      this.imageId = imageId;
      this.styleModel = styleModel;
      this.modelKind = modelKind;
      this.messages = [];
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    } finally {
      this.pending = false;
      this.notify();
    }
  }

  async send(text: string): Promise<ChatReply> {
    if (this.sessionId === null) throw new Error("no active session");
    if (this.pending) throw new Error("request already in flight");
    this.pending = true;
    this.lastError = null;
    this.notify();
    try {
      const reply = await this.api.sendTurn({
        session_id: this.sessionId,
        text,
      });
      this.messages.push({ speaker: "human", text });
      this.messages.push({
        speaker: "model",
        text: reply.text,
        scoreOrLogprob: reply.score_or_logprob,
        candidatesConsidered: reply.candidates_considered,
      });
      return reply;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    } finally {
      this.pending = false;
      this.notify();
    }
  }

  /** Locally held transcript in the server's export shape. */
  exportTranscript(): SessionExport {
    if (this.sessionId === null) throw new Error("no active session");
    return {
      session_id: this.sessionId,
      image_id: this.imageId!,
      style_human: null,
      style_model: this.styleModel!,
      model_kind: this.modelKind,
      transcript: this.messages.map(({ speaker, text }) => ({
        speaker,
        text,
      })),
    };
  }

  /** The server's record of the current session. */
  fetchServerExport(): Promise<SessionExport> {
    if (this.sessionId === null) throw new Error("no active session");
    return this.api.sessionExport(this.sessionId);
  }
}

/**
 * Replay an exported transcript against the service: start a fresh
 * session with the same image, style and model kind, resend the human
 * turns in order, and compare each model reply byte-for-byte with the
 * recorded one.
 */
export async function replayTranscript(
  api: ApiClient,
  exported: SessionExport,
): Promise<ReplayResult> {
  const started = await api.startSession({
    start_session: {
      image_id: exported.image_id,
      style_model: exported.style_model,
      model_kind: exported.model_kind,
    },
  });
  const mismatches: ReplayMismatch[] = [];
  for (let i = 0; i < exported.transcript.length; i += 2) {
    const human = exported.transcript[i];
    const recorded = exported.transcript[i + 1];
    if (human?.speaker !== "human" || recorded?.speaker !== "model") {
      throw new Error(
        `transcript must alternate human/model turns (at index ${i})`,
      );
    }
    const reply = await api.sendTurn({
      session_id: started.session_id,
      text: human.text,
    });
    if (reply.text !== recorded.text) {
      mismatches.push({
        turnIndex: i + 1,
        expected: recorded.text,
        actual: reply.text,
      });
    }
  }
  return {
    identical: mismatches.length === 0,
    mismatches,
    sessionId: started.session_id,
  };
}
