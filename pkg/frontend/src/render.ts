import { PosteriorView, SessionState, Ternary } from './api.js'

export const RESPONSE_BUTTONS: Array<{ code: Ternary; label: string }> = [
  { code: 1, label: 'Prefer warmer' },
  { code: 0, label: 'Satisfied' },
  { code: -1, label: 'Prefer cooler' },
]

const STOP_LABELS: Record<string, string> = {
  eui_low: 'little left to learn from further queries',
  eui_ratio: 'information gain stopped improving',
  budget_exhausted: 'query budget used up',
  ci_width: 'preferred temperature pinned down to under 1 °C',
}

function fmt(x: number): string {
  return x.toFixed(1)
}

/** One query: the temperature being tried and the three-point response scale.
 * `busy` disables the buttons while the server refits. */
export function renderQueryCard(
  root: HTMLElement,
  state: SessionState,
  onRespond: (code: Ternary, comment: string) => void,
  busy = false,
): void {
  const temp = state.current_query
  const step = state.history.length + 1
  const buttons = RESPONSE_BUTTONS.map(
    (b) => `
      <button data-response="${b.code}" ${busy ? 'disabled' : ''}
              style="flex:1;padding:12px 8px;font-size:15px;border-radius:8px;border:1px solid #555;
                     background:${busy ? '#2a2a2a' : '#383838'};color:#eee;cursor:${busy ? 'default' : 'pointer'}">
        ${b.label}
      </button>`,
  ).join('')
  root.innerHTML = `
    <div style="opacity:.7;font-size:13px">Query ${step} of ${state.budget}</div>
    <div style="font-size:40px;margin:8px 0">${temp === null ? '--' : fmt(temp)} °C</div>
    <div style="margin:4px 0 12px;opacity:.85">How does this temperature feel?</div>
    <div style="display:flex;gap:10px">${buttons}</div>
    <input id="comment" type="text" placeholder="optional comment"
           style="margin-top:12px;width:100%;box-sizing:border-box;padding:8px;border-radius:6px;
                  border:1px solid #444;background:#222;color:#eee">
    ${busy ? '<div style="margin-top:10px;opacity:.7">computing next query…</div>' : ''}
    ${state.error ? `<div style="margin-top:10px;color:#f88">last refit failed (${state.error}); please answer again</div>` : ''}
  `
  if (busy) return
  const comment = root.querySelector<HTMLInputElement>('#comment')
  for (const btn of root.querySelectorAll<HTMLButtonElement>('button[data-response]')) {
    btn.onclick = () => {
      const code = Number(btn.dataset.response) as Ternary
      onRespond(code, comment ? comment.value.trim() : '')
    }
  }
}

/** Terminal card: recommended setpoint with its 95% credible interval. */
export function renderCompletionCard(root: HTMLElement, state: SessionState): void {
  const summary = state.posterior_summary
  if (!summary) {
    root.innerHTML = '<div style="opacity:.7">session ended before any refit completed</div>'
    return
  }
  const [lo, hi] = summary.ci95
  const reason = state.stop_reason ? (STOP_LABELS[state.stop_reason] ?? state.stop_reason) : ''
  root.innerHTML = `
    <div style="opacity:.7;font-size:13px">Session complete after ${state.history.length} queries</div>
    <div style="margin:10px 0 4px;opacity:.85">Recommended setpoint</div>
    <div data-role="setpoint" style="font-size:44px">${fmt(summary.median)} °C</div>
    <div data-role="interval" style="margin-top:6px;opacity:.85">
      95% interval ${fmt(lo)} – ${fmt(hi)} °C
    </div>
    ${reason ? `<div style="margin-top:10px;opacity:.6;font-size:13px">stopped: ${reason}</div>` : ''}
  `
}

/** Bar chart of the preferred-temperature pmf plus a band of normalized
 * utility quantiles. Placeholder until the first refit lands. */
export function renderPosterior(root: HTMLElement, view: PosteriorView | null): void {
  if (!view || !view.available) {
    root.innerHTML = '<div style="opacity:.5">posterior appears after the first response</div>'
    return
  }
  const peak = Math.max(...view.pmf, 1e-12)
  const bars = view.grid.map((x, i) => {
    const h = Math.round((view.pmf[i] / peak) * 100)
    const inCi = x >= view.ci95[0] && x <= view.ci95[1]
    return `
      <div style="flex:1;display:flex;flex-direction:column;justify-content:flex-end;height:120px">
        <div data-role="bar" data-temp="${x}"
             style="height:${h}%;background:${inCi ? '#7ab8f5' : '#4a6a8a'};border-radius:2px 2px 0 0"></div>
      </div>`
  }).join('')
  const labels = view.grid.map((x, i) => {
    const text = i % 4 === 0 ? fmt(x) : ''
    return `<div style="flex:1;text-align:center;font-size:10px;opacity:.6">${text}</div>`
  }).join('')
  root.innerHTML = `
    <div style="opacity:.85;margin-bottom:6px">Preferred temperature (median ${fmt(view.median)} °C)</div>
    <div style="display:flex;gap:2px;align-items:flex-end">${bars}</div>
    <div style="display:flex;gap:2px">${labels}</div>
    <div style="opacity:.85;margin:14px 0 4px">Utility (5–95% band)</div>
    ${utilityBand(view)}
  `
}

function utilityBand(view: Extract<PosteriorView, { available: true }>): string {
  const { values } = view.quantiles
  if (values.length < 3) return ''
  const lo = values[0]
  const mid = values[Math.floor(values.length / 2)]
  const hi = values[values.length - 1]
  const all = ([] as number[]).concat(lo, hi)
  const min = Math.min(...all)
  const span = Math.max(...all) - min || 1
  const W = 360
  const H = 90
  const px = (i: number) => (i / (view.grid.length - 1)) * W
  const py = (v: number) => H - ((v - min) / span) * (H - 8) - 4
  const pts = (row: number[]) => row.map((v, i) => `${px(i).toFixed(1)},${py(v).toFixed(1)}`)
  const band = [...pts(hi), ...pts(lo).reverse()].join(' ')
  return `
    <svg viewBox="0 0 ${W} ${H}" style="width:100%;height:${H}px">
      <polygon points="${band}" fill="#7ab8f5" opacity="0.25"></polygon>
      <polyline points="${pts(mid).join(' ')}" fill="none" stroke="#7ab8f5" stroke-width="2"></polyline>
    </svg>
  `
}

const RESPONSE_GLYPHS: Record<string, string> = { '1': 'warmer', '0': 'satisfied', '-1': 'cooler' }

export function renderHistory(root: HTMLElement, state: SessionState): void {
  if (state.history.length === 0) {
    root.innerHTML = ''
    return
  }
  const rows = state.history.map((h) => `
    <tr>
      <td style="padding:3px 10px 3px 0;opacity:.7">${h.step}</td>
      <td style="padding:3px 10px 3px 0">${fmt(h.query_temp)} °C</td>
      <td style="padding:3px 10px 3px 0">${h.response === null ? '' : RESPONSE_GLYPHS[String(h.response)]}</td>
      <td style="padding:3px 0;opacity:.7">${h.eui === null ? '' : h.eui.toFixed(3)}</td>
    </tr>`).join('')
  root.innerHTML = `
    <table style="border-collapse:collapse;font-size:13px">
      <thead><tr style="opacity:.6;text-align:left">
        <th style="padding-right:10px">#</th><th style="padding-right:10px">queried</th>
        <th style="padding-right:10px">answer</th><th>EUI</th>
      </tr></thead>
      <tbody>${rows}</tbody>
    </table>
  `
}
