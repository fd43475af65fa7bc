// Wire types mirroring the curation service's JSON bodies.

export interface PointPromptJson {
  kind: 'point'
  x: number
  y: number
}

export interface BoxPromptJson {
  kind: 'box'
  x1: number
  y1: number
  x2: number
  y2: number
}

export interface FreeFormPromptJson {
  kind: 'free_form'
  vertices: [number, number][]
}

export type PromptJson = PointPromptJson | BoxPromptJson | FreeFormPromptJson

export interface TurnJson {
  role: 'user' | 'assistant'
  text: string
}

export interface SampleJson {
  sample_id: string
  image_path: string
  domain: string
  prompts: PromptJson[]
  prompt_kind: 'point' | 'box'
  task: string
  turns: TurnJson[]
  provenance: { source: string; generator: string }
  prompt_channel?: 'encoder' | 'text'
  text_coords?: number[][]
}

export type DecisionAction = 'accept' | 'reject' | 'edit'

export interface DecisionJson {
  sample_id: string
  reviewer: string
  action: DecisionAction
  edit?: SampleJson | null
  note?: string
}

export interface StatsJson {
  pending: number
  accepted: number
  rejected: number
  edited: number
  total: number
}

export interface QueueNextJson {
  sample: SampleJson | null
  status?: string
}
