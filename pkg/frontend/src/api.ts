// Typed wrappers over the curation service's documented endpoints.
// The UI talks to nothing else.

import type { DecisionJson, QueueNextJson, SampleJson, StatsJson } from './types.js'

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown
  ) {
    super(`HTTP ${status}`)
  }
}

export class CurationApi {
  constructor(private baseUrl: string = '') {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init)
    if (!resp.ok) {
      let detail: unknown = null
      try {
        detail = (await resp.json()).detail
      } catch {
        detail = await resp.text().catch(() => null)
      }
      throw new ApiError(resp.status, detail)
    }
    return (await resp.json()) as T
  }

  stats(): Promise<StatsJson> {
    return this.request<StatsJson>('/api/stats')
  }

  queueNext(reviewer: string): Promise<QueueNextJson> {
    return this.request<QueueNextJson>(
      `/api/queue/next?reviewer=${encodeURIComponent(reviewer)}`
    )
  }

  sample(sampleId: string): Promise<{ sample: SampleJson; status: string }> {
    return this.request(`/api/samples/${encodeURIComponent(sampleId)}`)
  }

  postDecision(decision: DecisionJson): Promise<{ sample_id: string; status: string }> {
    return this.request('/api/decisions', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(decision),
    })
  }

  imageUrl(sampleId: string, marks: boolean): string {
    const suffix = marks ? '?marks=1' : ''
    return `${this.baseUrl}/api/images/${encodeURIComponent(sampleId)}${suffix}`
  }
}
