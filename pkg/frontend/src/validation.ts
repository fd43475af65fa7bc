// Client-side mirror of the server's sample invariants, so edits get
// instant feedback and the submit button can stay disabled while the
// buffer would be rejected anyway. The server remains the authority;
// anything that slips through still comes back as a 409 with violations.

import type { SampleJson } from './types.js'

const TASKS = new Set([
  'stage1-label',
  'multi-target-caption',
  'brief-caption',
  'detailed-caption',
  'inter-relationship',
  'qa',
  'reasoning',
  'binary',
])

const DOMAINS = new Set([
  'natural',
  'document',
  'ocr',
  'remote-sensing',
  'screenshot',
  'multi-panel',
])

const MARK_TOKEN = /<Mark (\d+)>/g

function inUnit(v: unknown): boolean {
  return typeof v === 'number' && Number.isFinite(v) && v >= 0 && v <= 1
}

function promptProblems(sample: SampleJson): string[] {
  const problems: string[] = []
  sample.prompts.forEach((p, i) => {
    if (p.kind === 'point') {
      if (!inUnit(p.x) || !inUnit(p.y)) problems.push(`prompt ${i + 1}: point outside [0,1]`)
    } else if (p.kind === 'box') {
      if (![p.x1, p.y1, p.x2, p.y2].every(inUnit)) {
        problems.push(`prompt ${i + 1}: box outside [0,1]`)
      } else if (!(p.x1 < p.x2 && p.y1 < p.y2)) {
        problems.push(`prompt ${i + 1}: box corners not ordered`)
      }
    } else if (p.kind === 'free_form') {
      if (p.vertices.length < 3) problems.push(`prompt ${i + 1}: needs >= 3 vertices`)
      else if (!p.vertices.every(([x, y]) => inUnit(x) && inUnit(y))) {
        problems.push(`prompt ${i + 1}: vertex outside [0,1]`)
      }
    } else {
      problems.push(`prompt ${i + 1}: unknown kind`)
    }
  })
  return problems
}

/** All invariant violations of a sample; empty means valid. */
export function sampleViolations(sample: SampleJson): string[] {
  const problems: string[] = []
  if (!sample.sample_id) problems.push('sample_id empty')
  if (!TASKS.has(sample.task)) problems.push(`unknown task ${JSON.stringify(sample.task)}`)
  if (!DOMAINS.has(sample.domain)) problems.push(`unknown domain ${JSON.stringify(sample.domain)}`)
  if (sample.prompt_kind !== 'point' && sample.prompt_kind !== 'box') {
    problems.push('prompt_kind must be point or box')
  }

  const roles = new Set(sample.turns.map((t) => t.role))
  if (!roles.has('user') || !roles.has('assistant')) {
    problems.push('needs at least one user and one assistant turn')
  }
  for (const turn of sample.turns) {
    if (turn.role !== 'user' && turn.role !== 'assistant') {
      problems.push(`turn role ${JSON.stringify(turn.role)} outside user/assistant`)
    }
    if (!turn.text.trim()) problems.push('empty turn text')
  }

  const channel = sample.prompt_channel ?? 'encoder'
  const nMarks = channel === 'text' ? (sample.text_coords ?? []).length : sample.prompts.length
  if (channel === 'encoder') {
    if (sample.prompts.length === 0) problems.push('prompts empty')
  } else if (channel === 'text') {
    if (sample.prompts.length > 0) problems.push('prompts present on text-channel sample')
    if (!sample.text_coords || sample.text_coords.length === 0) problems.push('text_coords empty')
  } else {
    problems.push('unknown prompt_channel')
  }

  for (const turn of sample.turns) {
    for (const match of turn.text.matchAll(MARK_TOKEN)) {
      const k = Number(match[1])
      if (k < 1 || k > nMarks) problems.push(`mark token <Mark ${k}> outside 1..${nMarks}`)
    }
  }
  problems.push(...promptProblems(sample))
  return problems
}

/** Parse an edit buffer; returns the sample or the list of problems. */
export function parseEditBuffer(
  text: string
): { sample: SampleJson; problems: string[] } | { sample: null; problems: string[] } {
  let parsed: unknown
  try {
    parsed = JSON.parse(text)
  } catch (err) {
    return { sample: null, problems: [`not valid JSON: ${(err as Error).message}`] }
  }
  if (typeof parsed !== 'object' || parsed === null || Array.isArray(parsed)) {
    return { sample: null, problems: ['edit buffer must hold one sample object'] }
  }
  const sample = parsed as SampleJson
  if (!Array.isArray(sample.turns) || !Array.isArray(sample.prompts)) {
    return { sample: null, problems: ['sample needs prompts and turns arrays'] }
  }
  return { sample, problems: sampleViolations(sample) }
}
