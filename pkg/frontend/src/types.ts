// Serialized document shapes, matching the HTTP API exactly.

export type SessionState =
  | 'created'
  | 'concept_validated'
  | 'analogies_ready'
  | 'analogy_chosen'
  | 'storyboard_ready'
  | 'video_ready'
  | 'failed';

export type Verdict = 'valid' | 'ambiguous' | 'not_a_concept';

export interface ConceptDoc {
  name: string;
  subject: string;
  learner_level: string | null;
}

export interface DefinitionCheckDoc {
  concept: ConceptDoc;
  definition: string;
  verdict: Verdict;
  rationale: string;
}

export interface MappingDoc {
  concept_component: string;
  analogy_component: string;
}

export interface AnalogyDoc {
  id: string;
  title: string;
  scenario: string;
  mappings: MappingDoc[];
}

export interface BlobRefDoc {
  hash: string;
  media_type: string;
  byte_length: number;
}

export interface CoverageReportDoc {
  analogy_id: string;
  probe_source: string;
  matched: string[];
  missing_required: string[];
  coverage_ratio: number;
}

export interface CoverageAttemptDoc {
  prompt: string;
  image: BlobRefDoc;
  caption: string;
  report: CoverageReportDoc;
}

export interface SceneDoc {
  index: number;
  image_prompt: string;
  description: string;
  image: BlobRefDoc | null;
  coverage: CoverageAttemptDoc[] | null;
  edited_by_user: boolean;
}

export interface ChecklistItemDoc {
  canonical: string;
  aliases: string[];
  criticality: 'required' | 'optional';
}

export interface ChecklistDoc {
  analogy_id: string;
  items: ChecklistItemDoc[];
}

export interface StoryboardDoc {
  analogy_id: string;
  narrative: string;
  scenes: SceneDoc[];
  checklist: ChecklistDoc;
  template_versions: Record<string, string>;
}

export interface SessionDoc {
  id: string;
  state: SessionState;
  concept: ConceptDoc;
  definition_check: DefinitionCheckDoc | null;
  analogies: AnalogyDoc[] | null;
  chosen_analogy_id: string | null;
  storyboard: StoryboardDoc | null;
  video: BlobRefDoc | null;
  created_at: string;
  updated_at: string;
  failure_reason: string | null;
}

export interface JobAccepted {
  id: string;
  session_id: string;
  kind: string;
  status: string;
  status_url: string;
  events_url: string;
}

export interface ProgressEventDoc {
  job_id: string;
  stage_label: string;
  fraction: number;
  message: string | null;
  terminal: boolean;
  status: string;
  timestamp: string;
}
