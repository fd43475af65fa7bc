// Bootstrap: wire the session, renderer, and keyboard together.

import { CurationApi } from './api.js'
import { attachKeyboard } from './keyboard.js'
import { renderApp } from './render.js'
import { ReviewSession } from './state.js'

export interface MountOptions {
  baseUrl?: string
  reviewer?: string
}

/** Mount the review app into a root element; returns the live session. */
export function mountApp(root: HTMLElement, options: MountOptions = {}): ReviewSession {
  const doc = root.ownerDocument
  const reviewer =
    options.reviewer ??
    new URL(doc.defaultView!.location.href).searchParams.get('reviewer') ??
    'anonymous'
  const api = new CurationApi(options.baseUrl ?? '')
  const session = new ReviewSession(api, reviewer)
  session.subscribe((view) => renderApp(root, session, view))
  attachKeyboard(session, doc)
  void session.start()
  return session
}

// browser entry point; tests import mountApp directly instead
if (typeof document !== 'undefined' && document.getElementById('app')) {
  mountApp(document.getElementById('app') as HTMLElement)
}
