// Display <-> image coordinate mapping.
//
// The canvas layer owns exactly one transform: everything drawn on screen
// goes through imageToDisplay, every pointer event comes back through
// displayToImage. Draft boxes are therefore stored in true image pixels no
// matter how the image is scaled or letterboxed on screen.

export interface Point {
  x: number
  y: number
}

export interface ViewTransform {
  imageWidth: number
  imageHeight: number
  displayWidth: number
  displayHeight: number
  /** Display-space offset of the image's top-left corner (letterboxing). */
  offsetX: number
  offsetY: number
}

/** Fit an image into a viewport, preserving aspect ratio and centering. */
export function fitImage(
  imageWidth: number,
  imageHeight: number,
  viewportWidth: number,
  viewportHeight: number,
): ViewTransform {
  const scale = Math.min(viewportWidth / imageWidth, viewportHeight / imageHeight)
  const displayWidth = imageWidth * scale
  const displayHeight = imageHeight * scale
  return {
    imageWidth,
    imageHeight,
    displayWidth,
    displayHeight,
    offsetX: (viewportWidth - displayWidth) / 2,
    offsetY: (viewportHeight - displayHeight) / 2,
  }
}

export function scaleOf(t: ViewTransform): { x: number; y: number } {
  return { x: t.displayWidth / t.imageWidth, y: t.displayHeight / t.imageHeight }
}

export function displayToImage(point: Point, t: ViewTransform): Point {
  const s = scaleOf(t)
  const x = (point.x - t.offsetX) / s.x
  const y = (point.y - t.offsetY) / s.y
  return {
    x: Math.min(Math.max(x, 0), t.imageWidth),
    y: Math.min(Math.max(y, 0), t.imageHeight),
  }
}

export function imageToDisplay(point: Point, t: ViewTransform): Point {
  const s = scaleOf(t)
  return { x: point.x * s.x + t.offsetX, y: point.y * s.y + t.offsetY }
}
