// Live-service session: spawn the real curation service on the fixture
// images, drive the UI in jsdom purely through keyboard events, and check
// the server's view of the outcome (1 accepted, 1 rejected, 1 edited),
// including that a mid-session refresh loses nothing acknowledged.

import { spawn, type ChildProcess } from 'node:child_process'
import { mkdtempSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join, resolve } from 'node:path'
import { afterAll, beforeAll, describe, expect, it } from 'vitest'

import { mountApp } from '../src/main.js'
import type { ReviewSession } from '../src/state.js'
import type { SampleJson, StatsJson } from '../src/types.js'

const REPO_ROOT = resolve(__dirname, '..', '..')
const PORT = 18_400 + (process.pid % 500)
const BASE = `http://127.0.0.1:${PORT}`

function candidate(i: number): SampleJson {
  return {
    sample_id: `cand-${i}`,
    image_path: 'fixtures/images/scene0.png',
    domain: 'natural',
    prompts: [{ kind: 'box', x1: 0.1, y1: 0.15, x2: 0.45, y2: 0.6 }],
    prompt_kind: 'box',
    task: 'qa',
    turns: [
      { role: 'user', text: `What is <Mark 1> doing? (${i})` },
      { role: 'assistant', text: `Answer number ${i}.` },
    ],
    provenance: { source: 'fixture', generator: 'rule' },
  }
}

async function waitForServer(): Promise<void> {
  for (let tries = 0; tries < 100; tries++) {
    try {
      const resp = await fetch(`${BASE}/api/stats`)
      if (resp.ok) return
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 100))
  }
  throw new Error('curation service never came up')
}

async function until<T>(probe: () => T | null | undefined, what: string): Promise<T> {
  for (let tries = 0; tries < 200; tries++) {
    const value = probe()
    if (value !== null && value !== undefined) return value
    await new Promise((r) => setTimeout(r, 25))
  }
  throw new Error(`timed out waiting for ${what}`)
}

function key(target: EventTarget, init: KeyboardEventInit): void {
  target.dispatchEvent(new KeyboardEvent('keydown', { bubbles: true, ...init }))
}

let service: ChildProcess

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), 'review-ui-'))
  const candidatesPath = join(dir, 'candidates.jsonl')
  writeFileSync(
    candidatesPath,
    [0, 1, 2].map((i) => JSON.stringify(candidate(i))).join('\n') + '\n'
  )
  service = spawn(
    'vptk',
    [
      'curate', 'serve',
      '--candidates', candidatesPath,
      '--log', join(dir, 'decisions.jsonl'),
      '--addr', `127.0.0.1:${PORT}`,
      '--image-root', REPO_ROOT,
    ],
    { cwd: REPO_ROOT, stdio: 'ignore' }
  )
  await waitForServer()
})

afterAll(() => {
  service?.kill()
})

describe('scripted keyboard session against the live service', () => {
  it('reviews three samples via a, r, e+submit and survives refresh', async () => {
    const root = document.createElement('div')
    document.body.appendChild(root)
    const session: ReviewSession = mountApp(root, { baseUrl: BASE, reviewer: 'itester' })

    await until(() => (session.view().phase === 'review' ? true : null), 'first sample')
    expect(session.view().sample?.sample_id).toBe('cand-0')
    expect(root.querySelector('#stats')?.textContent).toContain('pending 3')
    // mark tokens in the text panel are highlighted to match the overlay ids
    expect(root.querySelector('.mark-token')?.textContent).toBe('<Mark 1>')

    // a -> accept cand-0
    key(document, { key: 'a' })
    await until(
      () => (session.view().sample?.sample_id === 'cand-1' ? true : null),
      'advance past accept'
    )

    // overlay toggle is a pure view change (m twice returns to marks view)
    expect(session.imageUrl()).toContain('marks=1')
    key(document, { key: 'm' })
    expect(session.imageUrl()).not.toContain('marks=1')
    key(document, { key: 'm' })
    expect(session.imageUrl()).toContain('marks=1')

    // r -> reject cand-1
    key(document, { key: 'r' })
    await until(
      () => (session.view().sample?.sample_id === 'cand-2' ? true : null),
      'advance past reject'
    )

    // refresh mid-session: a brand-new mount sees both acknowledged decisions
    const statsMidway = (await (await fetch(`${BASE}/api/stats`)).json()) as StatsJson
    expect(statsMidway.accepted).toBe(1)
    expect(statsMidway.rejected).toBe(1)
    const refreshedRoot = document.createElement('div')
    document.body.appendChild(refreshedRoot)
    const refreshed = mountApp(refreshedRoot, { baseUrl: BASE, reviewer: 'second-window' })
    await until(() => refreshed.view().stats, 'refreshed stats')
    expect(refreshed.view().stats?.accepted).toBe(1)
    expect(refreshed.view().stats?.rejected).toBe(1)

    // e -> edit mode on cand-2; an invalid buffer blocks submit
    key(document, { key: 'e' })
    await until(() => root.querySelector('#edit-buffer'), 'edit form')
    const view = session.view()
    const editing = JSON.parse(view.editBuffer) as SampleJson
    const deleted = { ...editing, turns: [editing.turns[0]!] }
    let area = root.querySelector('#edit-buffer') as HTMLTextAreaElement
    area.value = JSON.stringify(deleted, null, 2)
    area.dispatchEvent(new Event('input', { bubbles: true }))
    expect((root.querySelector('#submit-edit') as HTMLButtonElement).disabled).toBe(true)
    expect(root.querySelector('#violations')?.textContent).toContain('assistant')

    // u -> local undo restores the buffer; server state untouched
    key(document, { key: 'u' })
    expect(session.view().editProblems).toEqual([])

    // a/r must not fire while typing in the buffer
    area = root.querySelector('#edit-buffer') as HTMLTextAreaElement
    key(area, { key: 'a' })
    expect(session.view().phase).toBe('edit')

    // now a real edit, submitted with Ctrl+Enter
    const edited = { ...editing }
    edited.turns = [editing.turns[0]!, { role: 'assistant', text: 'A carefully edited answer.' }]
    area.value = JSON.stringify(edited, null, 2)
    area.dispatchEvent(new Event('input', { bubbles: true }))
    expect((root.querySelector('#submit-edit') as HTMLButtonElement).disabled).toBe(false)
    // the input re-rendered the form, so grab the live textarea before typing
    area = root.querySelector('#edit-buffer') as HTMLTextAreaElement
    key(area, { key: 'Enter', ctrlKey: true })

    await until(() => (session.view().phase === 'done' ? true : null), 'queue drained')

    // server truth: 1 accepted, 1 rejected, 1 edited
    const stats = (await (await fetch(`${BASE}/api/stats`)).json()) as StatsJson
    expect(stats).toMatchObject({ pending: 0, accepted: 1, rejected: 1, edited: 1, total: 3 })

    // the edited sample exports in its edited form
    const exportText = await (await fetch(`${BASE}/api/export?status=accepted`)).text()
    const lines = exportText.trim().split('\n').map((l) => JSON.parse(l) as SampleJson)
    expect(lines.map((s) => s.sample_id)).toEqual(['cand-0', 'cand-2'])
    expect(lines[1]!.turns[1]!.text).toBe('A carefully edited answer.')
  })
})
