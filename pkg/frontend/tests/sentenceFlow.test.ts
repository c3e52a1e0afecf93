import { describe, expect, it } from 'vitest'

import {
  buildSentenceDecision,
  canSubmit,
  editSentence,
  initialSentenceState,
  pickCandidate,
  rejectAll,
} from '../src/sentenceFlow.js'
import { isExpired, remainingSeconds, startLease } from '../src/countdown.js'

const CANDIDATES = ['first', 'second', 'third', 'fourth', 'fifth']

describe('sentence decision building', () => {
  it('pick without edit posts only the index', () => {
    const state = pickCandidate(initialSentenceState(CANDIDATES), 3)
    expect(buildSentenceDecision(state, 'ann-1')).toEqual({
      annotator_id: 'ann-1',
      chosen_index: 3,
    })
  })

  it('pick plus edit carries the edited text', () => {
    let state = pickCandidate(initialSentenceState(CANDIDATES), 1)
    state = editSentence(state, ' a sharper wording ')
    expect(buildSentenceDecision(state, 'ann-1')).toEqual({
      annotator_id: 'ann-1',
      chosen_index: 1,
      edited_text: 'a sharper wording',
    })
  })

  it('an edit equal to the original counts as unedited', () => {
    let state = pickCandidate(initialSentenceState(CANDIDATES), 2)
    state = editSentence(state, 'third')
    expect(buildSentenceDecision(state, 'ann-1')).toEqual({
      annotator_id: 'ann-1',
      chosen_index: 2,
    })
  })

  it('none usable posts an explicit rejection', () => {
    const state = rejectAll(initialSentenceState(CANDIDATES))
    expect(buildSentenceDecision(state, 'ann-1')).toEqual({
      annotator_id: 'ann-1',
      none_valid: true,
    })
  })

  it('picking again clears a stale edit', () => {
    let state = pickCandidate(initialSentenceState(CANDIDATES), 0)
    state = editSentence(state, 'custom text')
    state = pickCandidate(state, 4)
    expect(buildSentenceDecision(state, 'ann-1')).toEqual({
      annotator_id: 'ann-1',
      chosen_index: 4,
    })
  })

  it('out-of-range pick throws', () => {
    expect(() => pickCandidate(initialSentenceState(CANDIDATES), 9)).toThrow(RangeError)
  })
})

describe('submit gating by lease', () => {
  it('cannot submit with nothing chosen', () => {
    expect(canSubmit(initialSentenceState(CANDIDATES), false)).toBe(false)
  })

  it('expiry disables submit even with a valid choice', () => {
    const state = pickCandidate(initialSentenceState(CANDIDATES), 0)
    expect(canSubmit(state, false)).toBe(true)
    expect(canSubmit(state, true)).toBe(false)
  })

  it('countdown reaches zero exactly at the lease horizon', () => {
    const lease = startLease(120, 1_000_000)
    expect(remainingSeconds(lease, 1_000_000)).toBe(120)
    expect(remainingSeconds(lease, 1_000_000 + 60_000)).toBe(60)
    expect(isExpired(lease, 1_000_000 + 119_999)).toBe(false)
    expect(isExpired(lease, 1_000_000 + 120_000)).toBe(true)
  })
})
