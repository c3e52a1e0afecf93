// Wire types mirroring the annotation service API.

export type TaskKind = 'sentence_validation' | 'alt_bbox'

export interface SentencePayload {
  candidates: string[]
  intention_type: string
  image_ref: string
  image_size: { width: number; height: number }
  category: string
}

export interface BBoxPayload {
  sentence: string
  image_ref: string
  image_size: { width: number; height: number }
  category: string
  intention_type: string
  existing_boxes: number[][]
}

export interface TaskDto {
  task_id: string
  kind: TaskKind
  record_id: string
  payload: SentencePayload | BBoxPayload
  state: string
  lease: { annotator_id: string; expires_at: number } | null
}

export interface TaskEnvelope {
  task: TaskDto | null
  lease_seconds: number
}

export interface BoxIn {
  box: [number, number, number, number]
  category: string
}

export interface DecisionBody {
  annotator_id: string
  chosen_index?: number | null
  edited_text?: string | null
  none_valid?: boolean
  boxes?: BoxIn[] | null
}

export interface RecordDto {
  record_id: string
  image_ref: string
  image_size: { width: number; height: number }
  object_category: string
  query_type: string
  query_text: string
  primary_bbox: number[]
  alternative_bboxes: number[][]
  split: string
}

export interface FinalizeResult {
  status: 'finalized' | 'rejected' | 'pending'
  reason: string | null
  added_boxes: number
  record: RecordDto | null
}
