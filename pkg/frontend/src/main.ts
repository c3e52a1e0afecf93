// DOM wiring. Everything stateful lives in the small modules this file
// composes; main.ts only touches the document.

import { AnnotationApi, ApiError } from './api.js'
import { BoxCollection, beginDrag, endDrag, idleDrag, moveDrag, type DragState } from './boxTool.js'
import { formatRemaining, isExpired, startLease, type LeaseClock } from './countdown.js'
import {
  buildSentenceDecision,
  canSubmit,
  editSentence,
  initialSentenceState,
  pickCandidate,
  rejectAll,
  type SentenceState,
} from './sentenceFlow.js'
import { fitImage, imageToDisplay, type ViewTransform } from './transform.js'
import type { BBoxPayload, SentencePayload, TaskDto } from './types.js'

const params = new URLSearchParams(window.location.search)
const api = new AnnotationApi(params.get('service') ?? 'http://127.0.0.1:8700')
const annotatorId = params.get('annotator') ?? `annotator-${Math.random().toString(36).slice(2, 8)}`

const el = {
  status: document.getElementById('status') as HTMLElement,
  countdown: document.getElementById('countdown') as HTMLElement,
  nextButton: document.getElementById('next-task') as HTMLButtonElement,
  sentencePanel: document.getElementById('sentence-panel') as HTMLElement,
  candidateList: document.getElementById('candidate-list') as HTMLElement,
  editBox: document.getElementById('edit-box') as HTMLTextAreaElement,
  submitSentence: document.getElementById('submit-sentence') as HTMLButtonElement,
  rejectAllButton: document.getElementById('reject-all') as HTMLButtonElement,
  bboxPanel: document.getElementById('bbox-panel') as HTMLElement,
  sentenceUnderReview: document.getElementById('sentence-under-review') as HTMLElement,
  categoryInput: document.getElementById('category-input') as HTMLInputElement,
  boxList: document.getElementById('box-list') as HTMLElement,
  submitBoxes: document.getElementById('submit-boxes') as HTMLButtonElement,
  noneValidButton: document.getElementById('none-valid') as HTMLButtonElement,
  canvas: document.getElementById('image-canvas') as HTMLCanvasElement,
}

let task: TaskDto | null = null
let lease: LeaseClock | null = null
let sentenceState: SentenceState | null = null
let drag: DragState = idleDrag()
let boxes = new BoxCollection()
let transform: ViewTransform | null = null
let image: HTMLImageElement | null = null

function setStatus(text: string): void {
  el.status.textContent = text
}

function leaseExpired(): boolean {
  return lease !== null && isExpired(lease, Date.now())
}

setInterval(() => {
  if (!lease) {
    el.countdown.textContent = ''
    return
  }
  el.countdown.textContent = leaseExpired()
    ? 'lease expired — fetch the task again'
    : `lease ${formatRemaining(lease, Date.now())}`
  refreshControls()
}, 500)

function refreshControls(): void {
  const expired = leaseExpired()
  el.submitSentence.disabled =
    !sentenceState || !canSubmit(sentenceState, expired)
  el.rejectAllButton.disabled = expired || !sentenceState
  el.submitBoxes.disabled = expired || task?.kind !== 'alt_bbox'
  el.noneValidButton.disabled = expired || task?.kind !== 'alt_bbox'
}

function renderCandidates(): void {
  if (!sentenceState) return
  el.candidateList.replaceChildren()
  sentenceState.candidates.forEach((sentence, index) => {
    const label = document.createElement('label')
    const radio = document.createElement('input')
    radio.type = 'radio'
    radio.name = 'candidate'
    radio.checked = sentenceState!.chosenIndex === index
    radio.addEventListener('change', () => {
      sentenceState = pickCandidate(sentenceState!, index)
      el.editBox.value = sentence
      refreshControls()
    })
    label.append(radio, ` ${sentence}`)
    const item = document.createElement('li')
    item.append(label)
    el.candidateList.append(item)
  })
}

function drawCanvas(): void {
  const ctx = el.canvas.getContext('2d')
  if (!ctx || !transform) return
  ctx.clearRect(0, 0, el.canvas.width, el.canvas.height)
  if (image) {
    ctx.drawImage(image, transform.offsetX, transform.offsetY, transform.displayWidth, transform.displayHeight)
  } else {
    ctx.fillStyle = '#222'
    ctx.fillRect(transform.offsetX, transform.offsetY, transform.displayWidth, transform.displayHeight)
  }
  const payload = task?.payload as BBoxPayload | undefined
  if (payload?.existing_boxes) {
    ctx.strokeStyle = '#3fa34d'
    ctx.lineWidth = 2
    for (const raw of payload.existing_boxes) {
      strokeImageBox(ctx, raw[0]!, raw[1]!, raw[2]!, raw[3]!)
    }
  }
  ctx.strokeStyle = '#e4b429'
  for (const { box } of boxes.all()) {
    strokeImageBox(ctx, box.x1, box.y1, box.x2, box.y2)
  }
  if (drag.start && drag.current) {
    ctx.strokeStyle = '#e4582b'
    ctx.strokeRect(
      Math.min(drag.start.x, drag.current.x),
      Math.min(drag.start.y, drag.current.y),
      Math.abs(drag.current.x - drag.start.x),
      Math.abs(drag.current.y - drag.start.y),
    )
  }
}

function strokeImageBox(ctx: CanvasRenderingContext2D, x1: number, y1: number, x2: number, y2: number): void {
  if (!transform) return
  const a = imageToDisplay({ x: x1, y: y1 }, transform)
  const b = imageToDisplay({ x: x2, y: y2 }, transform)
  ctx.strokeRect(a.x, a.y, b.x - a.x, b.y - a.y)
}

function renderBoxList(): void {
  el.boxList.replaceChildren()
  boxes.all().forEach(({ box, category }, index) => {
    const item = document.createElement('li')
    item.textContent = `${category}: [${box.x1.toFixed(0)}, ${box.y1.toFixed(0)}, ${box.x2.toFixed(0)}, ${box.y2.toFixed(0)}] `
    const remove = document.createElement('button')
    remove.textContent = 'x'
    remove.addEventListener('click', () => {
      boxes.removeAt(index)
      renderBoxList()
      drawCanvas()
    })
    item.append(remove)
    el.boxList.append(item)
  })
}

function canvasPoint(event: PointerEvent): { x: number; y: number } {
  const rect = el.canvas.getBoundingClientRect()
  return { x: event.clientX - rect.left, y: event.clientY - rect.top }
}

el.canvas.addEventListener('pointerdown', (event) => {
  if (task?.kind !== 'alt_bbox' || leaseExpired()) return
  drag = beginDrag(canvasPoint(event))
  el.canvas.setPointerCapture(event.pointerId)
})
el.canvas.addEventListener('pointermove', (event) => {
  if (!drag.start) return
  drag = moveDrag(drag, canvasPoint(event))
  drawCanvas()
})
el.canvas.addEventListener('pointerup', () => {
  if (!transform || !drag.start) return
  const box = endDrag(drag, transform)
  drag = idleDrag()
  if (box) {
    const category = el.categoryInput.value.trim() || (task?.payload as BBoxPayload).category
    boxes.add(box, category)
    renderBoxList()
  }
  drawCanvas()
})

async function loadTask(): Promise<void> {
  try {
    const envelope = await api.nextTask(annotatorId)
    task = envelope.task
    if (!task) {
      setStatus('queue drained — nothing to annotate')
      lease = null
      el.sentencePanel.hidden = true
      el.bboxPanel.hidden = true
      return
    }
    lease = startLease(envelope.lease_seconds, Date.now())
    setStatus(`task ${task.task_id} (${task.kind}) as ${annotatorId}`)
    if (task.kind === 'sentence_validation') {
      const payload = task.payload as SentencePayload
      sentenceState = initialSentenceState(payload.candidates)
      el.sentencePanel.hidden = false
      el.bboxPanel.hidden = true
      el.editBox.value = ''
      renderCandidates()
    } else {
      const payload = task.payload as BBoxPayload
      sentenceState = null
      boxes = new BoxCollection()
      el.sentencePanel.hidden = true
      el.bboxPanel.hidden = false
      el.sentenceUnderReview.textContent = payload.sentence
      el.categoryInput.value = ''
      transform = fitImage(
        payload.image_size.width,
        payload.image_size.height,
        el.canvas.width,
        el.canvas.height,
      )
      image = new Image()
      image.onload = drawCanvas
      image.onerror = () => {
        image = null
        drawCanvas()
      }
      image.src = api.imageUrl(payload.image_ref)
      renderBoxList()
      drawCanvas()
    }
    refreshControls()
  } catch (error) {
    setStatus(error instanceof ApiError ? error.message : String(error))
  }
}

async function submitAndFinalize(body: Parameters<AnnotationApi['submitDecision']>[1]): Promise<void> {
  if (!task) return
  try {
    await api.submitDecision(task.task_id, body)
    const result = await api.finalize(task.record_id)
    setStatus(`record ${task.record_id}: ${result.status}${result.reason ? ` (${result.reason})` : ''}`)
    task = null
    lease = null
    el.sentencePanel.hidden = true
    el.bboxPanel.hidden = true
  } catch (error) {
    if (error instanceof ApiError && error.status === 409) {
      setStatus('lease expired — fetch the task again')
    } else {
      setStatus(error instanceof ApiError ? error.message : String(error))
    }
  }
}

el.editBox.addEventListener('input', () => {
  if (sentenceState && sentenceState.chosenIndex !== null) {
    sentenceState = editSentence(sentenceState, el.editBox.value)
  }
})
el.submitSentence.addEventListener('click', () => {
  if (sentenceState) void submitAndFinalize(buildSentenceDecision(sentenceState, annotatorId))
})
el.rejectAllButton.addEventListener('click', () => {
  if (sentenceState) {
    sentenceState = rejectAll(sentenceState)
    void submitAndFinalize(buildSentenceDecision(sentenceState, annotatorId))
  }
})
el.submitBoxes.addEventListener('click', () => {
  void submitAndFinalize({ annotator_id: annotatorId, boxes: boxes.toDecisionBoxes() })
})
el.noneValidButton.addEventListener('click', () => {
  void submitAndFinalize({ annotator_id: annotatorId, none_valid: true, boxes: [] })
})
el.nextButton.addEventListener('click', () => void loadTask())

setStatus(`ready as ${annotatorId}; fetch a task to begin`)
refreshControls()
