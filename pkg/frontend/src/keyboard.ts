// Keyboard-driven review flow. Keys act only outside text inputs, so
// typing in the edit buffer can never fire a decision.
//
//   a          accept            r   reject
//   e          open edit mode    u   undo last edit-buffer change (local)
//   m          toggle mark overlay
//   Ctrl+Enter submit edit       Escape  cancel edit
//   y          retry an unacknowledged decision

import type { ReviewSession } from './state.js'

const TEXT_TAGS = new Set(['INPUT', 'TEXTAREA', 'SELECT'])

export function attachKeyboard(session: ReviewSession, doc: Document): () => void {
  const onKeyDown = (event: KeyboardEvent) => {
    const target = event.target as HTMLElement | null
    const typing = target !== null && (TEXT_TAGS.has(target.tagName) || target.isContentEditable)

    if (typing) {
      if (event.key === 'Enter' && event.ctrlKey) {
        event.preventDefault()
        void session.submitEdit()
      } else if (event.key === 'Escape') {
        event.preventDefault()
        session.cancelEdit()
      }
      return
    }

    switch (event.key) {
      case 'a':
        event.preventDefault()
        void session.decide('accept')
        break
      case 'r':
        event.preventDefault()
        void session.decide('reject')
        break
      case 'e':
        event.preventDefault()
        session.openEdit()
        break
      case 'u':
        event.preventDefault()
        session.undoLocal()
        break
      case 'm':
        event.preventDefault()
        session.toggleOverlay()
        break
      case 'y':
        event.preventDefault()
        void session.retryPending()
        break
      case 'Escape':
        event.preventDefault()
        session.cancelEdit()
        break
      case 'Enter':
        if (event.ctrlKey) {
          event.preventDefault()
          void session.submitEdit()
        }
        break
    }
  }
  doc.addEventListener('keydown', onKeyDown)
  return () => doc.removeEventListener('keydown', onKeyDown)
}
