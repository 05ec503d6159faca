/**
 * Pointer input: maps canvas coordinates into the arena and drives the
 * human avatar with a human-plausible speed cap of 1.6 m/s, so the model
 * stays in-distribution relative to its walking training data. Poses are
 * emitted at 50 Hz; out-of-arena pointers clamp to the boundary (the
 * equivalent of leaving a tracked capture volume).
 */

export const MAX_HUMAN_SPEED = 1.6; // m/s
export const ARENA_HALF = 3.0; // m
export const HUMAN_HEIGHT = 1.7; // m

export interface AvatarState {
  x: number;
  y: number;
  yaw: number;
}

export function clampToArena(x: number, y: number, half = ARENA_HALF): [number, number] {
  return [Math.max(-half, Math.min(half, x)), Math.max(-half, Math.min(half, y))];
}

/**
 * Advance the avatar one tick toward the pointer target, capped at
 * MAX_HUMAN_SPEED; the avatar faces its direction of motion.
 */
export function stepAvatar(
  avatar: AvatarState,
  targetX: number,
  targetY: number,
  dt: number,
  maxSpeed = MAX_HUMAN_SPEED,
): AvatarState {
  const [tx, ty] = clampToArena(targetX, targetY);
  const dx = tx - avatar.x;
  const dy = ty - avatar.y;
  const dist = Math.hypot(dx, dy);
  const step = Math.min(dist, maxSpeed * dt);
  if (dist < 1e-9) {
    return avatar;
  }
  const nx = avatar.x + (dx / dist) * step;
  const ny = avatar.y + (dy / dist) * step;
  return { x: nx, y: ny, yaw: Math.atan2(dy, dx) };
}

export function avatarPoseMsg(avatar: AvatarState, t: number) {
  const half = avatar.yaw / 2;
  return {
    type: "human_pose" as const,
    t,
    x: avatar.x,
    y: avatar.y,
    z: HUMAN_HEIGHT,
    qw: Math.cos(half),
    qx: 0,
    qy: 0,
    qz: Math.sin(half),
  };
}

/** Canvas pixel -> arena metres for a square canvas rendering the arena. */
export function canvasToArena(
  px: number,
  py: number,
  canvasSize: number,
  half = ARENA_HALF,
): [number, number] {
  const scale = (2 * half) / canvasSize;
  return [px * scale - half, half - py * scale];
}

export function arenaToCanvas(
  x: number,
  y: number,
  canvasSize: number,
  half = ARENA_HALF,
): [number, number] {
  const scale = canvasSize / (2 * half);
  return [(x + half) * scale, (half - y) * scale];
}
