import { ApiClient, PosteriorView, SessionState, SessionStatus, Ternary } from './api.js'

export function isTerminal(status: SessionStatus): boolean {
  return status === 'converged' || status === 'budget_exhausted'
}

/** Drives one session: submits responses, polls while the server refits, and
 * stops polling once the session reaches a terminal status.
 *
 * Every mutation is keyed by the step token (1-based index of the response
 * being answered), so a double click can be dropped client-side and the
 * server dedupes whatever still slips through. */
export class SessionController {
  state: SessionState | null = null
  posterior: PosteriorView | null = null

  private api: ApiClient
  private onChange: (c: SessionController) => void
  private pollMs: number
  private timer: ReturnType<typeof setTimeout> | null = null
  private submittedStep = 0

  constructor(api: ApiClient, onChange: (c: SessionController) => void, pollMs = 1500) {
    this.api = api
    this.onChange = onChange
    this.pollMs = pollMs
  }

  /** Step token the next submit will carry. */
  currentStep(): number {
    return this.state ? this.state.history.length + 1 : 1
  }

  async start(initTemp: number, budget?: number, seed?: number): Promise<void> {
    this.state = await this.api.createSession(initTemp, budget, seed)
    this.onChange(this)
    this.schedule()
  }

  /** Returns false when the submit was dropped (not awaiting, or this step
   * token was already sent). */
  async submit(response: Ternary, comment?: string): Promise<boolean> {
    if (!this.state || this.state.status !== 'awaiting_response') return false
    const step = this.currentStep()
    if (step <= this.submittedStep) return false
    this.submittedStep = step
    try {
      this.state = await this.api.submitResponse(this.state.id, step, response, comment)
    } catch (err) {
      // free the token so the occupant can retry after a failed request
      this.submittedStep = step - 1
      throw err
    }
    this.onChange(this)
    this.schedule()
    return true
  }

  stop(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer)
      this.timer = null
    }
  }

  private schedule(): void {
    if (!this.state || this.timer !== null) return
    if (isTerminal(this.state.status)) {
      void this.refreshPosterior()
      return
    }
    this.timer = setTimeout(() => {
      this.timer = null
      void this.poll()
    }, this.pollMs)
  }

  private async poll(): Promise<void> {
    if (!this.state) return
    try {
      this.state = await this.api.getState(this.state.id)
      if (this.state.posterior_summary !== null) await this.refreshPosterior()
    } catch {
      // transient fetch failure: keep the last snapshot and poll again
    }
    this.onChange(this)
    this.schedule()
  }

  private async refreshPosterior(): Promise<void> {
    if (!this.state) return
    try {
      this.posterior = await this.api.getPosterior(this.state.id)
      this.onChange(this)
    } catch {
      // chart keeps its previous data
    }
  }
}
