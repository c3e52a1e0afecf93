// Sentence-validation task state: pick one of five candidates, optionally
// refine its wording, or reject the whole set.

import type { DecisionBody } from './types.js'

export interface SentenceState {
  candidates: string[]
  chosenIndex: number | null
  editedText: string | null
  noneValid: boolean
}

export function initialSentenceState(candidates: string[]): SentenceState {
  return { candidates, chosenIndex: null, editedText: null, noneValid: false }
}

export function pickCandidate(state: SentenceState, index: number): SentenceState {
  if (index < 0 || index >= state.candidates.length) {
    throw new RangeError(`candidate index ${index} out of range`)
  }
  // picking resets any edit made to a previously chosen sentence
  return { ...state, chosenIndex: index, editedText: null, noneValid: false }
}

export function editSentence(state: SentenceState, text: string): SentenceState {
  if (state.chosenIndex === null) {
    throw new Error('pick a candidate before editing')
  }
  const trimmed = text.trim()
  const original = state.candidates[state.chosenIndex]
  return { ...state, editedText: trimmed && trimmed !== original ? trimmed : null }
}

export function rejectAll(state: SentenceState): SentenceState {
  return { ...state, chosenIndex: null, editedText: null, noneValid: true }
}

export function canSubmit(state: SentenceState, leaseExpired: boolean): boolean {
  if (leaseExpired) return false
  return state.noneValid || state.chosenIndex !== null
}

export function buildSentenceDecision(state: SentenceState, annotatorId: string): DecisionBody {
  if (state.noneValid) {
    return { annotator_id: annotatorId, none_valid: true }
  }
  if (state.chosenIndex === null) {
    throw new Error('no candidate chosen')
  }
  const body: DecisionBody = { annotator_id: annotatorId, chosen_index: state.chosenIndex }
  if (state.editedText !== null) body.edited_text = state.editedText
  return body
}
