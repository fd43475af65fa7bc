// DOM rendering. The view is rebuilt from the session snapshot on every
// state change; sample text always goes through textContent (never
// innerHTML), with <Mark k> tokens wrapped in highlight spans that match
// the numbered chips in the overlay image.

import type { SessionView } from './state.js'
import type { ReviewSession } from './state.js'
import type { PromptJson } from './types.js'

const MARK_SPLIT = /(<Mark \d+>)/g

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag)
  if (className) node.className = className
  if (text !== undefined) node.textContent = text
  return node
}

function promptLabel(p: PromptJson, k: number): string {
  if (p.kind === 'point') return `Mark ${k}: point (${p.x.toFixed(3)}, ${p.y.toFixed(3)})`
  if (p.kind === 'box') {
    return `Mark ${k}: box [${p.x1.toFixed(3)}, ${p.y1.toFixed(3)}, ${p.x2.toFixed(3)}, ${p.y2.toFixed(3)}]`
  }
  return `Mark ${k}: free-form, ${p.vertices.length} vertices`
}

function renderText(doc: Document, container: HTMLElement, text: string): void {
  for (const piece of text.split(MARK_SPLIT)) {
    if (MARK_SPLIT.test(piece)) {
      const span = el(doc, 'span', 'mark-token', piece)
      container.appendChild(span)
      MARK_SPLIT.lastIndex = 0
    } else if (piece) {
      container.appendChild(doc.createTextNode(piece))
    }
  }
}

export function renderApp(root: HTMLElement, session: ReviewSession, view: SessionView): void {
  const doc = root.ownerDocument
  root.textContent = ''

  const header = el(doc, 'header')
  header.appendChild(el(doc, 'h1', undefined, 'candidate review'))
  const stats = el(doc, 'div', 'stats')
  stats.id = 'stats'
  if (view.stats) {
    stats.textContent =
      `pending ${view.stats.pending} · accepted ${view.stats.accepted} · ` +
      `rejected ${view.stats.rejected} · edited ${view.stats.edited} / ${view.stats.total}`
  } else {
    stats.textContent = 'stats unavailable'
  }
  header.appendChild(stats)
  root.appendChild(header)

  if (view.banner) {
    const banner = el(doc, 'div', 'banner', `${view.banner} — press y to retry`)
    banner.id = 'banner'
    root.appendChild(banner)
  }

  const phase = el(doc, 'div', 'phase')
  phase.id = 'phase'
  phase.dataset.phase = view.phase
  root.appendChild(phase)

  if (view.phase === 'done') {
    root.appendChild(el(doc, 'p', 'done', 'queue drained — nothing pending for you'))
    return
  }
  if (view.sample === null) {
    root.appendChild(el(doc, 'p', undefined, 'loading…'))
    return
  }

  const sample = view.sample
  const main = el(doc, 'main')

  // image panel with overlay toggle state
  const imagePane = el(doc, 'section', 'image-pane')
  const img = el(doc, 'img')
  img.id = 'image'
  const url = session.imageUrl()
  if (url) img.src = url
  img.alt = view.overlayOn ? 'image with numbered marks' : 'raw image'
  img.onerror = () => {
    img.replaceWith(el(doc, 'div', 'image-missing', 'image unavailable (decisions still work)'))
  }
  imagePane.appendChild(img)
  imagePane.appendChild(
    el(doc, 'div', 'overlay-state', view.overlayOn ? 'marks shown (m toggles)' : 'raw image (m toggles)')
  )
  main.appendChild(imagePane)

  // sample panel
  const pane = el(doc, 'section', 'sample-pane')
  pane.appendChild(
    el(doc, 'h2', undefined, `${sample.sample_id} · ${sample.domain} · ${sample.task}`)
  )
  const prompts = el(doc, 'ul', 'prompts')
  sample.prompts.forEach((p, i) => prompts.appendChild(el(doc, 'li', undefined, promptLabel(p, i + 1))))
  pane.appendChild(prompts)

  const turns = el(doc, 'div', 'turns')
  turns.id = 'turns'
  for (const turn of sample.turns) {
    const block = el(doc, 'div', `turn turn-${turn.role}`)
    block.appendChild(el(doc, 'span', 'role', turn.role))
    const body = el(doc, 'span', 'text')
    renderText(doc, body, turn.text)
    block.appendChild(body)
    turns.appendChild(block)
  }
  pane.appendChild(turns)
  main.appendChild(pane)
  root.appendChild(main)

  if (view.phase === 'edit') {
    const editor = el(doc, 'section', 'editor')
    const area = el(doc, 'textarea')
    area.id = 'edit-buffer'
    area.value = view.editBuffer
    area.rows = 20
    area.addEventListener('input', () => session.editInput(area.value))
    editor.appendChild(area)

    const violations = el(doc, 'ul', 'violations')
    violations.id = 'violations'
    for (const problem of view.editProblems) {
      violations.appendChild(el(doc, 'li', undefined, problem))
    }
    editor.appendChild(violations)

    const submit = el(doc, 'button', undefined, 'submit edit (Ctrl+Enter)')
    submit.id = 'submit-edit'
    submit.disabled = !view.canSubmitEdit
    submit.addEventListener('click', () => void session.submitEdit())
    editor.appendChild(submit)

    const cancel = el(doc, 'button', undefined, 'cancel (Esc)')
    cancel.id = 'cancel-edit'
    cancel.addEventListener('click', () => session.cancelEdit())
    editor.appendChild(cancel)

    editor.appendChild(el(doc, 'div', 'undo-depth', `undo depth: ${view.undoDepth} (u)`))
    root.appendChild(editor)
  } else {
    root.appendChild(
      el(doc, 'footer', 'keymap', 'keys: a accept · r reject · e edit · u undo · m marks · y retry')
    )
  }
}
