// Lease countdown, anchored to the client clock at task receipt so server
// clock skew cannot disable submit early.

export interface LeaseClock {
  receivedAtMs: number
  leaseSeconds: number
}

export function startLease(leaseSeconds: number, nowMs: number): LeaseClock {
  return { receivedAtMs: nowMs, leaseSeconds }
}

export function remainingSeconds(lease: LeaseClock, nowMs: number): number {
  const elapsed = (nowMs - lease.receivedAtMs) / 1000
  return Math.max(0, lease.leaseSeconds - elapsed)
}

export function isExpired(lease: LeaseClock, nowMs: number): boolean {
  return remainingSeconds(lease, nowMs) <= 0
}

export function formatRemaining(lease: LeaseClock, nowMs: number): string {
  const total = Math.floor(remainingSeconds(lease, nowMs))
  const minutes = Math.floor(total / 60)
  const seconds = total % 60
  return `${minutes}:${String(seconds).padStart(2, '0')}`
}
