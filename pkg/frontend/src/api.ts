/** Typed client for the three annotation endpoints the UI is allowed to use. */

export interface PairPayload {
  pair_id: string;
  word: string;
  pos: string;
  definition: string;
  output_a: string;
  output_b: string;
  index: number;
  total: number;
}

export interface NextResponse {
  done: boolean;
  pair: PairPayload | null;
}

export interface LabelAck {
  pair_id: string;
  annotator_id: string;
  choice: string;
  duplicate: boolean;
}

export interface Progress {
  total: number;
  by_annotator: Record<string, number>;
}

export type Choice = "a" | "b";

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    throw new ApiError(`server returned ${response.status}`, response.status);
  }
  return (await response.json()) as T;
}

export class AnnotationApi {
  constructor(
    private readonly sessionId: string,
    private readonly baseUrl: string = "",
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}/api/session/${encodeURIComponent(this.sessionId)}${path}`;
  }

  async next(annotatorId: string): Promise<NextResponse> {
    const query = new URLSearchParams({ annotator: annotatorId });
    return asJson(await fetch(this.url(`/next?${query}`)));
  }

  /** Safe to repeat: the server acknowledges replays with the stored record. */
  async submit(pairId: string, annotatorId: string, choice: Choice): Promise<LabelAck> {
    return asJson(
      await fetch(this.url("/label"), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ pair_id: pairId, annotator_id: annotatorId, choice }),
      }),
    );
  }

  async progress(): Promise<Progress> {
    return asJson(await fetch(this.url("/progress")));
  }
}
