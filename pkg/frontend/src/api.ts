/** Typed client for the session HTTP API. The console renders only what
 * these endpoints return; it computes nothing itself. */

export type Ternary = -1 | 0 | 1

export type SessionStatus =
  | 'awaiting_response'
  | 'computing'
  | 'converged'
  | 'budget_exhausted'

export type StepRecord = {
  step: number
  query_temp: number
  response: Ternary | null
  eui: number | null
  eui_ratio: number | null
  ci95: [number, number] | null
  timestamp: number | null
}

export type PosteriorSummary = {
  median: number
  ci95: [number, number]
}

export type SessionState = {
  schema: number
  id: string
  created_at: number
  status: SessionStatus
  budget: number
  seed: number
  current_query: number | null
  history: StepRecord[]
  comments: Array<{ step: number; text: string }>
  eui: Record<string, number> | null
  posterior_summary: PosteriorSummary | null
  stop_reason: string | null
  error: string | null
}

export type PosteriorView =
  | { schema: number; available: false }
  | {
      schema: number
      available: true
      grid: number[]
      pmf: number[]
      median: number
      ci95: [number, number]
      quantiles: { qs: number[]; values: number[][] }
    }

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export class ApiClient {
  private base: string
  private fetchFn: FetchLike

  constructor(base = '', fetchFn?: FetchLike) {
    this.base = base
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init))
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, init)
    if (!res.ok) {
      const detail = await res.text().catch(() => '')
      throw new Error(`${res.status} on ${path}: ${detail}`)
    }
    return res.json() as Promise<T>
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    })
  }

  createSession(initTemp: number, budget?: number, seed?: number): Promise<SessionState> {
    return this.post('/sessions', { init_temp: initTemp, budget, seed })
  }

  getState(id: string): Promise<SessionState> {
    return this.request(`/sessions/${id}`)
  }

  getPosterior(id: string): Promise<PosteriorView> {
    return this.request(`/sessions/${id}/posterior`)
  }

  submitResponse(id: string, step: number, response: Ternary, comment?: string): Promise<SessionState> {
    const body = comment ? { step, response, comment } : { step, response }
    return this.post(`/sessions/${id}/response`, body)
  }
}
