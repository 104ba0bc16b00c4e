export function isTerminal(status) {
    return status === 'converged' || status === 'budget_exhausted';
}
/** Drives one session: submits responses, polls while the server refits, and
 * stops polling once the session reaches a terminal status.
 *
 * Every mutation is keyed by the step token (1-based index of the response
 * being answered), so a double click can be dropped client-side and the
 * server dedupes whatever still slips through. */
export class SessionController {
    constructor(api, onChange, pollMs = 1500) {
        this.state = null;
        this.posterior = null;
        this.timer = null;
        this.submittedStep = 0;
        this.api = api;
        this.onChange = onChange;
        this.pollMs = pollMs;
    }
    /** Step token the next submit will carry. */
    currentStep() {
        return this.state ? this.state.history.length + 1 : 1;
    }
    async start(initTemp, budget, seed) {
        this.state = await this.api.createSession(initTemp, budget, seed);
        this.onChange(this);
        this.schedule();
    }
    /** Returns false when the submit was dropped (not awaiting, or this step
     * token was already sent). */
    async submit(response, comment) {
        if (!this.state || this.state.status !== 'awaiting_response')
            return false;
        const step = this.currentStep();
        if (step <= this.submittedStep)
            return false;
        this.submittedStep = step;
        try {
            this.state = await this.api.submitResponse(this.state.id, step, response, comment);
        }
        catch (err) {
            // free the token so the occupant can retry after a failed request
            this.submittedStep = step - 1;
            throw err;
        }
        this.onChange(this);
        this.schedule();
        return true;
    }
    stop() {
        if (this.timer !== null) {
            clearTimeout(this.timer);
            this.timer = null;
        }
    }
    schedule() {
        if (!this.state || this.timer !== null)
            return;
        if (isTerminal(this.state.status)) {
            void this.refreshPosterior();
            return;
        }
        this.timer = setTimeout(() => {
            this.timer = null;
            void this.poll();
        }, this.pollMs);
    }
    async poll() {
        if (!this.state)
            return;
        try {
            this.state = await this.api.getState(this.state.id);
            if (this.state.posterior_summary !== null)
                await this.refreshPosterior();
        }
        catch {
            // transient fetch failure: keep the last snapshot and poll again
        }
        this.onChange(this);
        this.schedule();
    }
    async refreshPosterior() {
        if (!this.state)
            return;
        try {
            this.posterior = await this.api.getPosterior(this.state.id);
            this.onChange(this);
        }
        catch {
            // chart keeps its previous data
        }
    }
}
