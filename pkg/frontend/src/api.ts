import type { DecisionBody, FinalizeResult, RecordDto, TaskDto, TaskEnvelope, TaskKind } from './types.js'

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`)
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText
    try {
      const body = (await response.json()) as { detail?: string }
      if (body.detail) detail = body.detail
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail)
  }
  return (await response.json()) as T
}

/** Thin client over the annotation service; all task state lives server-side. */
export class AnnotationApi {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path
  }

  async nextTask(annotator: string, kind?: TaskKind): Promise<TaskEnvelope> {
    const params = new URLSearchParams({ annotator })
    if (kind) params.set('kind', kind)
    return parseOrThrow(await fetch(this.url(`/tasks/next?${params}`)))
  }

  async submitDecision(taskId: string, body: DecisionBody): Promise<TaskDto> {
    const response = await fetch(this.url(`/tasks/${encodeURIComponent(taskId)}/decision`), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    })
    const data = await parseOrThrow<{ task: TaskDto }>(response)
    return data.task
  }

  async finalize(recordId: string): Promise<FinalizeResult> {
    const response = await fetch(this.url(`/records/${encodeURIComponent(recordId)}/finalize`), {
      method: 'POST',
    })
    return parseOrThrow(response)
  }

  async record(recordId: string): Promise<RecordDto> {
    const data = await parseOrThrow<{ record: RecordDto }>(
      await fetch(this.url(`/records/${encodeURIComponent(recordId)}`)),
    )
    return data.record
  }

  async stats(): Promise<Record<string, unknown>> {
    return parseOrThrow(await fetch(this.url('/stats')))
  }

  imageUrl(imageRef: string): string {
    return this.url(`/images/${imageRef}`)
  }
}
