import { afterEach, describe, expect, it, vi } from 'vitest'
import { ApiClient, PosteriorView, SessionState, Ternary } from '../src/api.js'
import { SessionController } from '../src/state.js'
import { RESPONSE_BUTTONS, renderCompletionCard, renderPosterior, renderQueryCard } from '../src/render.js'

function sessionFixture(over: Partial<SessionState> = {}): SessionState {
  return {
    schema: 1,
    id: 'abc123def456',
    created_at: 0,
    status: 'awaiting_response',
    budget: 10,
    seed: 7,
    current_query: 24.0,
    history: [],
    comments: [],
    eui: null,
    posterior_summary: null,
    stop_reason: null,
    error: null,
    ...over,
  }
}

type Call = { url: string; body: Record<string, unknown> | null }

/** fetch stub: records calls, answers from a handler. */
function fakeFetch(handler: (url: string, init?: RequestInit) => unknown) {
  const calls: Call[] = []
  const fn = async (url: string, init?: RequestInit) => {
    calls.push({ url, body: init?.body ? JSON.parse(String(init.body)) : null })
    const data = handler(url, init)
    return {
      ok: true,
      status: 200,
      json: async () => data,
      text: async () => '',
    } as unknown as Response
  }
  return { calls, fn }
}

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0))
}

function mount(): HTMLElement {
  const root = document.createElement('div')
  document.body.appendChild(root)
  return root
}

function clickButton(root: HTMLElement, label: string): void {
  const btn = [...root.querySelectorAll('button')].find((b) => b.textContent!.trim() === label)
  expect(btn, `button "${label}"`).toBeDefined()
  btn!.click()
}

async function startedController(handler: (url: string, init?: RequestInit) => unknown) {
  const { calls, fn } = fakeFetch(handler)
  const controller = new SessionController(new ApiClient('', fn), () => {}, 50)
  await controller.start(24.0)
  return { controller, calls }
}

afterEach(() => {
  document.body.innerHTML = ''
  vi.useRealTimers()
})

describe('response buttons', () => {
  const cases: Array<[string, Ternary]> = [
    ['Prefer warmer', 1],
    ['Satisfied', 0],
    ['Prefer cooler', -1],
  ]

  for (const [label, code] of cases) {
    it(`"${label}" posts integer code ${code}`, async () => {
      const { controller, calls } = await startedController((url) =>
        url.endsWith('/response') ? sessionFixture({ status: 'computing' }) : sessionFixture(),
      )
      const root = mount()
      renderQueryCard(root, controller.state!, (c, comment) => void controller.submit(c, comment || undefined))
      clickButton(root, label)
      await flush()
      const posts = calls.filter((c) => c.url.endsWith('/response'))
      expect(posts).toHaveLength(1)
      expect(posts[0].body).toEqual({ step: 1, response: code })
      controller.stop()
    })
  }

  it('keeps button order warmer / satisfied / cooler', () => {
    expect(RESPONSE_BUTTONS.map((b) => b.code)).toEqual([1, 0, -1])
  })

  it('sends the typed comment with the step', async () => {
    const { controller, calls } = await startedController((url) =>
      url.endsWith('/response') ? sessionFixture({ status: 'computing' }) : sessionFixture(),
    )
    const root = mount()
    renderQueryCard(root, controller.state!, (c, comment) => void controller.submit(c, comment || undefined))
    root.querySelector<HTMLInputElement>('#comment')!.value = 'this is good'
    clickButton(root, 'Satisfied')
    await flush()
    const posts = calls.filter((c) => c.url.endsWith('/response'))
    expect(posts[0].body).toEqual({ step: 1, response: 0, comment: 'this is good' })
    controller.stop()
  })

  it('disables the scale while the server is computing', () => {
    const root = mount()
    renderQueryCard(root, sessionFixture({ status: 'computing' }), () => {}, true)
    const buttons = [...root.querySelectorAll('button')]
    expect(buttons.length).toBe(3)
    expect(buttons.every((b) => b.disabled)).toBe(true)
  })
})

describe('double-submit dedupe', () => {
  it('a double click produces a single server mutation', async () => {
    const { controller, calls } = await startedController((url) =>
      url.endsWith('/response') ? sessionFixture({ status: 'computing' }) : sessionFixture(),
    )
    const root = mount()
    renderQueryCard(root, controller.state!, (c) => void controller.submit(c))
    clickButton(root, 'Satisfied')
    clickButton(root, 'Satisfied')
    await flush()
    expect(calls.filter((c) => c.url.endsWith('/response'))).toHaveLength(1)
    controller.stop()
  })

  it('the next step is submittable once history advances', async () => {
    const afterStep1 = sessionFixture({
      history: [
        {
          step: 1, query_temp: 24.0, response: 0, eui: 0.2,
          eui_ratio: null, ci95: [22.0, 26.0], timestamp: 1.0,
        },
      ],
      current_query: 25.0,
    })
    let submitted = 0
    const { controller, calls } = await startedController((url) => {
      if (url.endsWith('/response')) {
        submitted += 1
        return sessionFixture({ status: 'computing' })
      }
      return submitted > 0 ? afterStep1 : sessionFixture()
    })
    expect(await controller.submit(0)).toBe(true)
    expect(await controller.submit(0)).toBe(false)
    controller.state = afterStep1
    expect(await controller.submit(1)).toBe(true)
    const posts = calls.filter((c) => c.url.endsWith('/response')).map((c) => c.body)
    expect(posts).toEqual([
      { step: 1, response: 0 },
      { step: 2, response: 1 },
    ])
    controller.stop()
  })
})

describe('completion card', () => {
  it('renders the recommended setpoint and ci95 from a converged state', () => {
    const root = mount()
    renderCompletionCard(
      root,
      sessionFixture({
        status: 'converged',
        stop_reason: 'ci_width',
        posterior_summary: { median: 24.0, ci95: [23.4, 24.7] },
        history: [
          {
            step: 1, query_temp: 24.0, response: 0, eui: 0.01,
            eui_ratio: null, ci95: [23.4, 24.7], timestamp: 1.0,
          },
        ],
      }),
    )
    expect(root.querySelector('[data-role="setpoint"]')!.textContent).toContain('24.0')
    const interval = root.querySelector('[data-role="interval"]')!.textContent!
    expect(interval).toContain('23.4')
    expect(interval).toContain('24.7')
  })

  it('shows a placeholder when no refit ever completed', () => {
    const root = mount()
    renderCompletionCard(root, sessionFixture({ status: 'budget_exhausted' }))
    expect(root.textContent).toContain('session ended')
  })
})

describe('posterior chart', () => {
  const base = {
    schema: 1,
    available: true as const,
    median: 24.0,
    ci95: [23.5, 24.5] as [number, number],
    quantiles: { qs: [0.05, 0.5, 0.95], values: [[0, 0, 0, 0], [1, 2, 2, 1], [2, 3, 3, 2]] },
  }

  it('point-mass pmf renders a single full-height bar', () => {
    const root = mount()
    const view: PosteriorView = { ...base, grid: [23, 24, 25, 26], pmf: [0, 1, 0, 0] }
    renderPosterior(root, view)
    const heights = [...root.querySelectorAll<HTMLElement>('[data-role="bar"]')].map(
      (b) => b.style.height,
    )
    expect(heights).toEqual(['0%', '100%', '0%', '0%'])
  })

  it('uniform pmf renders equal bars', () => {
    const root = mount()
    const view: PosteriorView = { ...base, grid: [23, 24, 25, 26], pmf: [0.25, 0.25, 0.25, 0.25] }
    renderPosterior(root, view)
    const heights = new Set(
      [...root.querySelectorAll<HTMLElement>('[data-role="bar"]')].map((b) => b.style.height),
    )
    expect(heights).toEqual(new Set(['100%']))
  })

  it('renders a placeholder before any posterior exists', () => {
    const root = mount()
    renderPosterior(root, { schema: 1, available: false })
    expect(root.textContent).toContain('posterior appears')
  })
})

describe('polling', () => {
  it('ceases on terminal status', async () => {
    vi.useFakeTimers()
    const terminal = sessionFixture({
      status: 'converged',
      stop_reason: 'ci_width',
      posterior_summary: { median: 24.0, ci95: [23.4, 24.7] },
    })
    let stateCalls = 0
    const { fn, calls } = fakeFetch((url, init) => {
      if (url.endsWith('/posterior')) return { schema: 1, available: false }
      if (init?.method === 'POST') return sessionFixture()
      stateCalls += 1
      return stateCalls >= 2 ? terminal : sessionFixture({ status: 'computing' })
    })
    const controller = new SessionController(new ApiClient('', fn), () => {}, 50)
    await controller.start(24.0)
    await vi.advanceTimersByTimeAsync(60)
    expect(controller.state!.status).toBe('computing')
    await vi.advanceTimersByTimeAsync(60)
    expect(controller.state!.status).toBe('converged')
    const before = calls.filter((c) => /\/sessions\/[^/]+$/.test(c.url)).length
    await vi.advanceTimersByTimeAsync(2000)
    const after = calls.filter((c) => /\/sessions\/[^/]+$/.test(c.url)).length
    expect(after).toBe(before)
    controller.stop()
  })

  it('keeps polling through a transient fetch failure', async () => {
    vi.useFakeTimers()
    let n = 0
    const fn = async (url: string): Promise<Response> => {
      n += 1
      if (n === 2) throw new Error('network down')
      const data = url.endsWith('/posterior')
        ? { schema: 1, available: false }
        : sessionFixture({ status: n >= 3 ? 'converged' : 'awaiting_response' })
      return { ok: true, status: 200, json: async () => data, text: async () => '' } as unknown as Response
    }
    const controller = new SessionController(new ApiClient('', fn), () => {}, 50)
    await controller.start(24.0)
    await vi.advanceTimersByTimeAsync(60)
    expect(controller.state!.status).toBe('awaiting_response')
    await vi.advanceTimersByTimeAsync(60)
    expect(controller.state!.status).toBe('converged')
    controller.stop()
  })
})
