/**
 * Pure view-model builders for result rendering. Scores shown in the DOM
 * are the service's numbers formatted to exactly 3 decimals; nothing is
 * recomputed client-side.
 */

import { CandidateOut, IdentifyResponse, VerifyResponse } from "./api.js";

export interface CandidateView {
  rank: number;
  individualId: string;
  name: string;
  scoreText: string;
  accepted: boolean;
  initial: string; // avatar placeholder (gallery images live outside the service)
}

export interface VerifyView {
  individualId: string;
  scoreText: string;
  thresholdText: string;
  accepted: boolean;
  decisionText: string;
}

export function formatScore(score: number): string {
  return score.toFixed(3);
}

export function candidateViews(res: IdentifyResponse, k = 3): CandidateView[] {
  const sorted = [...res.candidates].sort(
    (a, b) => b.score - a.score || a.individual_id.localeCompare(b.individual_id),
  );
  return sorted.slice(0, k).map((c: CandidateOut) => ({
    rank: c.rank,
    individualId: c.individual_id,
    name: c.name,
    scoreText: formatScore(c.score),
    accepted: c.accepted,
    initial: (c.name || c.individual_id || "?").charAt(0).toUpperCase(),
  }));
}

export function isNoMatch(res: IdentifyResponse): boolean {
  return res.no_match || res.candidates.length === 0;
}

export function verifyView(res: VerifyResponse): VerifyView {
  return {
    individualId: res.individual_id,
    scoreText: formatScore(res.score),
    thresholdText: formatScore(res.threshold),
    accepted: res.accepted,
    decisionText: res.accepted ? "MATCH" : "NO MATCH",
  };
}

/** HTML for one candidate row; kept as a string builder so tests can
 * compare the displayed score against the payload without a browser. */
export function candidateHtml(view: CandidateView): string {
  const cls = view.accepted ? "candidate" : "candidate rejected";
  const flag = view.accepted ? "" : '<span class="flag">below threshold</span>';
  return (
    `<li class="${cls}" data-id="${escapeHtml(view.individualId)}">` +
    `<span class="avatar">${escapeHtml(view.initial)}</span>` +
    `<span class="rank">#${view.rank}</span>` +
    `<span class="name">${escapeHtml(view.name)}</span>` +
    `<span class="score">${view.scoreText}</span>${flag}</li>`
  );
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
