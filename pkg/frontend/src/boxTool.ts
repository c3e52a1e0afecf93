// Drag-to-draw rectangle tool. Pointer events arrive in display space;
// finished boxes are stored in image pixels via the shared transform.

import { displayToImage, type Point, type ViewTransform } from './transform.js'

export interface ImageBox {
  x1: number
  y1: number
  x2: number
  y2: number
}

export interface TaggedBox {
  box: ImageBox
  category: string
}

export interface DragState {
  start: Point | null
  current: Point | null
}

export function idleDrag(): DragState {
  return { start: null, current: null }
}

export function beginDrag(point: Point): DragState {
  return { start: point, current: point }
}

export function moveDrag(state: DragState, point: Point): DragState {
  if (!state.start) return state
  return { start: state.start, current: point }
}

function normalize(a: Point, b: Point): ImageBox {
  return {
    x1: Math.min(a.x, b.x),
    y1: Math.min(a.y, b.y),
    x2: Math.max(a.x, b.x),
    y2: Math.max(a.y, b.y),
  }
}

/**
 * Finish a drag: map both corners into image space and normalize.
 * Returns null for zero-area drags (clicks, sub-pixel slips), which are
 * discarded client-side.
 */
export function endDrag(state: DragState, transform: ViewTransform): ImageBox | null {
  if (!state.start || !state.current) return null
  const a = displayToImage(state.start, transform)
  const b = displayToImage(state.current, transform)
  const box = normalize(a, b)
  if (box.x2 - box.x1 < 1 || box.y2 - box.y1 < 1) return null
  return box
}

/** Draft boxes for one task, each tagged with a vocabulary category. */
export class BoxCollection {
  private boxes: TaggedBox[] = []

  add(box: ImageBox, category: string): void {
    this.boxes.push({ box, category })
  }

  removeAt(index: number): void {
    this.boxes.splice(index, 1)
  }

  all(): readonly TaggedBox[] {
    return this.boxes
  }

  get size(): number {
    return this.boxes.length
  }

  toDecisionBoxes(): { box: [number, number, number, number]; category: string }[] {
    return this.boxes.map(({ box, category }) => ({
      box: [box.x1, box.y1, box.x2, box.y2],
      category,
    }))
  }
}
