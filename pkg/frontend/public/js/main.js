import { ApiClient } from './api.js';
import { SessionController, isTerminal } from './state.js';
import { renderCompletionCard, renderHistory, renderPosterior, renderQueryCard } from './render.js';
function el(id) {
    const node = document.getElementById(id);
    if (!node)
        throw new Error(`missing #${id}`);
    return node;
}
function renderAll(c, card, chart, log) {
    const state = c.state;
    if (!state)
        return;
    if (isTerminal(state.status)) {
        renderCompletionCard(card, state);
    }
    else {
        renderQueryCard(card, state, onRespond(c), state.status === 'computing');
    }
    renderPosterior(chart, c.posterior);
    renderHistory(log, state);
}
function onRespond(c) {
    return (code, comment) => {
        void c.submit(code, comment || undefined).catch((err) => {
            console.error('submit failed', err);
        });
    };
}
function renderStart(root, onStart) {
    root.innerHTML = `
    <div style="margin-bottom:10px;opacity:.85">Start from the current room temperature</div>
    <div style="display:flex;gap:10px">
      <input id="init-temp" type="number" min="20" max="28" step="0.5" value="24.0"
             style="width:90px;padding:10px;border-radius:6px;border:1px solid #444;background:#222;color:#eee">
      <button id="start" style="padding:10px 18px;border-radius:8px;border:1px solid #555;
                                background:#383838;color:#eee;cursor:pointer">Start session</button>
    </div>
  `;
    const input = root.querySelector('#init-temp');
    const btn = root.querySelector('#start');
    if (!input || !btn)
        return;
    btn.onclick = () => onStart(Number(input.value));
}
export function boot() {
    const card = el('card');
    const chart = el('chart');
    const log = el('log');
    const api = new ApiClient('');
    const controller = new SessionController(api, (c) => renderAll(c, card, chart, log));
    renderStart(card, (temp) => {
        void controller.start(temp).catch((err) => {
            card.innerHTML = `<div style="color:#f88">could not start a session: ${err}</div>`;
        });
    });
    renderPosterior(chart, null);
}
boot();
