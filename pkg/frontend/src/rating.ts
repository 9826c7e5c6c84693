/** Client-side mirror of the rating-record invariant.
 *
 * The service enforces the same rules, but catching violations before the
 * POST gives the rater immediate feedback and keeps junk requests off the
 * wire. The one rule with real teeth: an equal rating (both sides scored
 * the same) must carry a justifying comment.
 */

import type { RatingPayload } from "./api.js";

export interface RatingDraft {
  pairId: number;
  raterId: string;
  pointsA: number;
  pointsB: number;
  comment: string;
}

/** Returns a human-readable problem, or null when the draft is valid. */
export function validateRating(draft: RatingDraft): string | null {
  if (!Number.isInteger(draft.pairId) || draft.pairId < 0) {
    return "no pair to rate yet";
  }
  if (draft.raterId.trim() === "") {
    return "rater id must not be blank";
  }
  for (const [label, points] of [
    ["a", draft.pointsA],
    ["b", draft.pointsB],
  ] as const) {
    if (points !== 0 && points !== 1) {
      return `points for side ${label} must be 0 or 1`;
    }
  }
  if (draft.pointsA === draft.pointsB && draft.comment.trim() === "") {
    return "an equal rating needs a comment explaining why";
  }
  return null;
}

/** Builds the wire payload; throws if the draft violates the invariant. */
export function buildRatingPayload(draft: RatingDraft): RatingPayload {
  const problem = validateRating(draft);
  if (problem !== null) {
    throw new Error(problem);
  }
  return {
    pair_id: draft.pairId,
    rater_id: draft.raterId.trim(),
    points_a: draft.pointsA,
    points_b: draft.pointsB,
    comment: draft.comment.trim(),
  };
}
