// Pure step logic: the wizard cursor is derived from server state and can
// never sit ahead of it.

import type { CoverageReportDoc, SceneDoc, SessionDoc, SessionState } from './types.js';

export const STEP_TITLES = [
  'Concept',
  'Definition',
  'Analogy',
  'Storyboard',
  'Video',
] as const;

export type StepIndex = 0 | 1 | 2 | 3 | 4;

/** The furthest step the server state supports showing. */
export function maxStepForState(state: SessionState): StepIndex {
  switch (state) {
    case 'created':
      return 0;
    case 'concept_validated':
      return 1;
    case 'analogies_ready':
      return 2;
    case 'analogy_chosen':
      return 3;
    case 'storyboard_ready':
      return 4;
    case 'video_ready':
      return 4;
    case 'failed':
      return 0;
  }
}

export function clampStep(requested: number, session: SessionDoc | null): StepIndex {
  if (session === null) {
    return 0;
  }
  const ceiling = maxStepForState(session.state);
  const step = Math.max(0, Math.min(requested, ceiling));
  return step as StepIndex;
}

/** Latest coverage report for a scene, or null before any image exists. */
export function latestCoverage(scene: SceneDoc): CoverageReportDoc | null {
  if (!scene.coverage || scene.coverage.length === 0) {
    return null;
  }
  return scene.coverage[scene.coverage.length - 1].report;
}

/** Required components the scene's current image still fails to show. */
export function sceneWarnings(scene: SceneDoc): string[] {
  const report = latestCoverage(scene);
  if (report === null) {
    return [];
  }
  return [...report.missing_required];
}

export function videoFileName(mediaType: string): string {
  return mediaType === 'video/mp4' ? 'video.mp4' : 'video-frames.zip';
}
