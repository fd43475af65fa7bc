// The review session state machine.
//
// One browser session = one reviewer working the queue: fetch next,
// render, capture a decision (accept / reject / edit+submit), POST it,
// advance only after the server acknowledges. Failed POSTs stay in
// `pendingDecision` and are retried; the server never sees a decision
// twice because retries re-send the same idempotent payload and the
// store's last-writer-wins semantics absorb duplicates. The local undo
// stack only ever touches the edit buffer, never the server.

import { ApiError, CurationApi } from './api.js'
import type { DecisionAction, DecisionJson, SampleJson, StatsJson } from './types.js'
import { parseEditBuffer } from './validation.js'

export type Phase = 'loading' | 'review' | 'edit' | 'done'

export interface SessionView {
  phase: Phase
  reviewer: string
  sample: SampleJson | null
  overlayOn: boolean
  stats: StatsJson | null
  editBuffer: string
  editProblems: string[]
  canSubmitEdit: boolean
  undoDepth: number
  banner: string | null
  pendingDecision: DecisionJson | null
}

type Listener = (view: SessionView) => void

export class ReviewSession {
  private phase: Phase = 'loading'
  private sample: SampleJson | null = null
  private overlayOn = true
  private stats: StatsJson | null = null
  private editBuffer = ''
  private editProblems: string[] = []
  private undoStack: string[] = []
  private banner: string | null = null
  private pendingDecision: DecisionJson | null = null
  private listeners: Listener[] = []

  constructor(
    private api: CurationApi,
    public readonly reviewer: string
  ) {}

  // --- view plumbing ---------------------------------------------------------

  subscribe(listener: Listener): void {
    this.listeners.push(listener)
  }

  view(): SessionView {
    return {
      phase: this.phase,
      reviewer: this.reviewer,
      sample: this.sample,
      overlayOn: this.overlayOn,
      stats: this.stats,
      editBuffer: this.editBuffer,
      editProblems: this.editProblems,
      canSubmitEdit: this.phase === 'edit' && this.editProblems.length === 0,
      undoDepth: this.undoStack.length,
      banner: this.banner,
      pendingDecision: this.pendingDecision,
    }
  }

  private emit(): void {
    const snapshot = this.view()
    for (const listener of this.listeners) listener(snapshot)
  }

  // --- lifecycle --------------------------------------------------------------

  async start(): Promise<void> {
    await this.refreshStats()
    await this.loadNext()
  }

  async refreshStats(): Promise<void> {
    try {
      this.stats = await this.api.stats()
    } catch {
      this.banner = 'stats unavailable'
    }
    this.emit()
  }

  async loadNext(): Promise<void> {
    this.phase = 'loading'
    this.emit()
    try {
      const next = await this.api.queueNext(this.reviewer)
      this.sample = next.sample
      this.phase = next.sample === null ? 'done' : 'review'
    } catch (err) {
      this.banner = `queue unreachable: ${(err as Error).message}`
    }
    this.editBuffer = ''
    this.editProblems = []
    this.undoStack = []
    this.emit()
  }

  // --- decisions -----------------------------------------------------------------

  async decide(action: Exclude<DecisionAction, 'edit'>): Promise<void> {
    if (this.phase !== 'review' || this.sample === null) return
    await this.post({
      sample_id: this.sample.sample_id,
      reviewer: this.reviewer,
      action,
    })
  }

  openEdit(): void {
    if (this.phase !== 'review' || this.sample === null) return
    this.phase = 'edit'
    this.editBuffer = JSON.stringify(this.sample, null, 2)
    this.editProblems = []
    this.undoStack = []
    this.emit()
  }

  editInput(text: string): void {
    if (this.phase !== 'edit') return
    this.undoStack.push(this.editBuffer)
    this.editBuffer = text
    const result = parseEditBuffer(text)
    this.editProblems = result.problems
    // candidates arrive with their prompts; this UI edits text only
    if (
      result.sample !== null &&
      this.sample !== null &&
      JSON.stringify(result.sample.prompts) !== JSON.stringify(this.sample.prompts)
    ) {
      this.editProblems = [...result.problems, 'prompt geometry is read-only in this UI']
    }
    this.emit()
  }

  /** Local-only undo: pops the edit buffer history, never touches the server. */
  undoLocal(): void {
    if (this.phase !== 'edit' || this.undoStack.length === 0) return
    this.editBuffer = this.undoStack.pop() as string
    this.editProblems = parseEditBuffer(this.editBuffer).problems
    this.emit()
  }

  cancelEdit(): void {
    if (this.phase !== 'edit') return
    this.phase = 'review'
    this.editBuffer = ''
    this.editProblems = []
    this.undoStack = []
    this.emit()
  }

  async submitEdit(): Promise<void> {
    if (this.phase !== 'edit' || this.sample === null) return
    const result = parseEditBuffer(this.editBuffer)
    if (result.sample === null || result.problems.length > 0) {
      this.editProblems = result.problems
      this.emit()
      return
    }
    await this.post({
      sample_id: this.sample.sample_id,
      reviewer: this.reviewer,
      action: 'edit',
      edit: result.sample,
    })
  }

  private async post(decision: DecisionJson): Promise<void> {
    try {
      await this.api.postDecision(decision)
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // server-side BadEdit: reopen the form with its violation list
        const detail = err.detail as { violations?: string[] } | null
        this.phase = 'edit'
        this.editProblems = detail?.violations ?? ['server rejected the edit']
        this.banner = 'edit rejected by the server'
        this.emit()
        return
      }
      // network trouble: keep the decision and surface a retry banner
      this.pendingDecision = decision
      this.banner = `decision not acknowledged, will retry: ${(err as Error).message}`
      this.emit()
      return
    }
    this.pendingDecision = null
    this.banner = null
    // undo stack is local-only state; an acknowledged submit clears it
    this.undoStack = []
    await this.refreshStats()
    await this.loadNext()
  }

  /** Re-send a decision that previously failed to reach the server. */
  async retryPending(): Promise<void> {
    if (this.pendingDecision === null) return
    await this.post(this.pendingDecision)
  }

  // --- view toggles ------------------------------------------------------------------

  /** Pure view change between the raw image and the marked overlay. */
  toggleOverlay(): void {
    this.overlayOn = !this.overlayOn
    this.emit()
  }

  imageUrl(): string | null {
    if (this.sample === null) return null
    return this.api.imageUrl(this.sample.sample_id, this.overlayOn)
  }
}
