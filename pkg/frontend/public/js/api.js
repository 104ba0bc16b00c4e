/** Typed client for the session HTTP API. The console renders only what
 * these endpoints return; it computes nothing itself. */
export class ApiClient {
    constructor(base = '', fetchFn) {
        this.base = base;
        this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
    }
    async request(path, init) {
        const res = await this.fetchFn(this.base + path, init);
        if (!res.ok) {
            const detail = await res.text().catch(() => '');
            throw new Error(`${res.status} on ${path}: ${detail}`);
        }
        return res.json();
    }
    post(path, body) {
        return this.request(path, {
            method: 'POST',
            headers: { 'content-type': 'application/json' },
            body: JSON.stringify(body),
        });
    }
    createSession(initTemp, budget, seed) {
        return this.post('/sessions', { init_temp: initTemp, budget, seed });
    }
    getState(id) {
        return this.request(`/sessions/${id}`);
    }
    getPosterior(id) {
        return this.request(`/sessions/${id}/posterior`);
    }
    submitResponse(id, step, response, comment) {
        const body = comment ? { step, response, comment } : { step, response };
        return this.post(`/sessions/${id}/response`, body);
    }
}
