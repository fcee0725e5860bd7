// The five-step wizard. Strictly server-state-driven: every mutation goes
// through the API, then the session is refetched and the DOM re-rendered;
// no pipeline logic lives on the client.

import { ApiClient, ApiError } from './api.js';
import { createStore, initialState, type Store, type WizardState } from './state.js';
import {
  STEP_TITLES,
  clampStep,
  maxStepForState,
  sceneWarnings,
  videoFileName,
} from './steps.js';
import type { JobAccepted, SceneDoc, SessionDoc } from './types.js';

export class Wizard {
  readonly store: Store<WizardState>;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {
    this.store = createStore<WizardState>({ ...initialState });
    this.store.subscribe(() => this.render());
  }

  start(): void {
    this.render();
  }

  // -- actions (each refetches the session afterwards) ------------------

  private async refresh(stepHint?: number): Promise<void> {
    const current = this.store.get().session;
    if (!current) {
      return;
    }
    const session = await this.api.getSession(current.id);
    const step = clampStep(
      stepHint ?? maxStepForState(session.state),
      session,
    );
    this.store.set({ session, stepIndex: step });
  }

  private async runAction(action: () => Promise<void>): Promise<void> {
    this.store.set({ error: null });
    try {
      await action();
    } catch (error) {
      // server-rejected actions leave the wizard where it is
      const message =
        error instanceof ApiError ? error.message : String(error);
      this.store.set({ error: message, busy: false });
    }
  }

  private async watchJob(job: JobAccepted, label: string): Promise<void> {
    this.store.set({ busy: true, jobLabel: label, jobFraction: 0 });
    try {
      const terminal = await this.api.streamJob(job, (event) => {
        this.store.set({ jobLabel: event.stage_label, jobFraction: event.fraction });
      });
      if (terminal.status === 'failed') {
        throw new ApiError(502, {
          error: 'job_failed',
          detail: terminal.message ?? 'generation failed',
        });
      }
    } finally {
      this.store.set({ busy: false, jobFraction: 1 });
    }
  }

  async submitConcept(name: string, subject: string, learnerLevel: string): Promise<void> {
    await this.runAction(async () => {
      const session = await this.api.createSession({
        name,
        subject,
        learner_level: learnerLevel || null,
      });
      this.store.set({ session, stepIndex: 0 });
      const start = await this.api.startValidate(session.id);
      if (start.job) {
        await this.watchJob(start.job, 'checking definition');
      }
      await this.refresh();
    });
  }

  async generateAnalogies(): Promise<void> {
    await this.runAction(async () => {
      const session = this.requireSession();
      const start = await this.api.startAnalogies(session.id);
      if (start.job) {
        await this.watchJob(start.job, 'inventing analogies');
      }
      await this.refresh();
    });
  }

  async chooseAnalogy(analogyId: string): Promise<void> {
    await this.runAction(async () => {
      const session = this.requireSession();
      await this.api.choose(session.id, analogyId);
      await this.refresh();
    });
  }

  async generateStoryboard(): Promise<void> {
    await this.runAction(async () => {
      const session = this.requireSession();
      const start = await this.api.startStoryboard(session.id);
      if (start.job) {
        await this.watchJob(start.job, 'building storyboard');
      }
      await this.refresh(3);
    });
  }

  async saveScene(index: number, description: string, imagePrompt: string): Promise<void> {
    await this.runAction(async () => {
      const session = this.requireSession();
      const scene = this.sceneByIndex(session, index);
      const patch: { description?: string; image_prompt?: string } = {};
      if (description !== scene.description) {
        patch.description = description;
      }
      if (imagePrompt !== scene.image_prompt) {
        patch.image_prompt = imagePrompt;
      }
      if (Object.keys(patch).length === 0) {
        return;
      }
      await this.api.editScene(session.id, index, patch);
      await this.refresh(3);
    });
  }

  async regenerateScene(index: number): Promise<void> {
    await this.runAction(async () => {
      const session = this.requireSession();
      const start = await this.api.startRegenerateScene(session.id, index);
      if (start.job) {
        await this.watchJob(start.job, `regenerating scene ${index}`);
      }
      await this.refresh(3);
    });
  }

  async renderVideo(): Promise<void> {
    await this.runAction(async () => {
      const session = this.requireSession();
      const start = await this.api.startVideo(session.id);
      if (start.job) {
        await this.watchJob(start.job, 'rendering video');
      }
      await this.refresh(4);
    });
  }

  goToStep(step: number): void {
    this.store.set({ stepIndex: clampStep(step, this.store.get().session) });
  }

  private requireSession(): SessionDoc {
    const session = this.store.get().session;
    if (!session) {
      throw new ApiError(409, { detail: 'no active session' });
    }
    return session;
  }

  private sceneByIndex(session: SessionDoc, index: number): SceneDoc {
    const scene = session.storyboard?.scenes.find((s) => s.index === index);
    if (!scene) {
      throw new ApiError(404, { detail: `no scene ${index}` });
    }
    return scene;
  }

  // -- rendering ----------------------------------------------------------

  private render(): void {
    const state = this.store.get();
    this.root.innerHTML = '';

    const nav = document.createElement('nav');
    nav.className = 'wizard-nav';
    STEP_TITLES.forEach((title, index) => {
      const button = document.createElement('button');
      button.textContent = `${index + 1}. ${title}`;
      const ceiling = state.session ? maxStepForState(state.session.state) : 0;
      button.disabled = state.busy || index > ceiling;
      if (index === state.stepIndex) {
        button.classList.add('active');
      }
      button.addEventListener('click', () => this.goToStep(index));
      nav.appendChild(button);
    });
    this.root.appendChild(nav);

    if (state.error) {
      const banner = document.createElement('div');
      banner.className = 'error-banner';
      banner.textContent = state.error;
      this.root.appendChild(banner);
    }

    if (state.busy) {
      this.root.appendChild(this.progressPanel(state));
    }

    const content = document.createElement('section');
    content.className = 'wizard-content';
    switch (state.stepIndex) {
      case 0:
        this.renderConceptStep(content, state);
        break;
      case 1:
        this.renderDefinitionStep(content, state);
        break;
      case 2:
        this.renderAnalogyStep(content, state);
        break;
      case 3:
        this.renderStoryboardStep(content, state);
        break;
      case 4:
        this.renderVideoStep(content, state);
        break;
    }
    this.root.appendChild(content);
  }

  private progressPanel(state: WizardState): HTMLElement {
    const panel = document.createElement('div');
    panel.className = 'progress-panel';
    const label = document.createElement('span');
    label.textContent = state.jobLabel;
    const bar = document.createElement('progress');
    bar.max = 1;
    bar.value = state.jobFraction;
    panel.append(label, bar);
    return panel;
  }

  private renderConceptStep(content: HTMLElement, state: WizardState): void {
    const heading = document.createElement('h2');
    heading.textContent = 'Which STEM concept should we explain?';
    content.appendChild(heading);

    if (state.session?.state === 'failed') {
      const note = document.createElement('p');
      note.className = 'failure-note';
      note.textContent = state.session.failure_reason ?? 'Concept rejected.';
      content.appendChild(note);
    }

    const form = document.createElement('form');
    form.className = 'concept-form';

    const nameInput = document.createElement('input');
    nameInput.name = 'concept';
    nameInput.placeholder = "e.g. Newton's First Law";
    nameInput.required = true;

    const subjectSelect = document.createElement('select');
    subjectSelect.name = 'subject';
    for (const subject of ['physics', 'math', 'programming', 'other']) {
      const option = document.createElement('option');
      option.value = subject;
      option.textContent = subject;
      subjectSelect.appendChild(option);
    }

    const levelSelect = document.createElement('select');
    levelSelect.name = 'learner_level';
    for (const level of ['', 'novice', 'intermediate', 'advanced']) {
      const option = document.createElement('option');
      option.value = level;
      option.textContent = level || 'any level';
      levelSelect.appendChild(option);
    }

    const submit = document.createElement('button');
    submit.type = 'submit';
    submit.textContent = 'Validate concept';
    submit.disabled = state.busy;

    form.append(nameInput, subjectSelect, levelSelect, submit);
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      void this.submitConcept(
        nameInput.value,
        subjectSelect.value,
        levelSelect.value,
      );
    });
    content.appendChild(form);
  }

  private renderDefinitionStep(content: HTMLElement, state: WizardState): void {
    const check = state.session?.definition_check;
    if (!check) {
      return;
    }
    const heading = document.createElement('h2');
    heading.textContent = `Definition (${check.verdict})`;
    const definition = document.createElement('p');
    definition.className = 'definition-text';
    definition.textContent = check.definition;
    const rationale = document.createElement('p');
    rationale.className = 'rationale';
    rationale.textContent = check.rationale;
    const next = document.createElement('button');
    next.className = 'primary';
    next.textContent = 'Looks right, suggest analogies';
    next.disabled = state.busy;
    next.addEventListener('click', () => void this.generateAnalogies());
    content.append(heading, definition, rationale, next);
  }

  private renderAnalogyStep(content: HTMLElement, state: WizardState): void {
    const session = state.session;
    if (!session?.analogies) {
      return;
    }
    const heading = document.createElement('h2');
    heading.textContent = 'Pick the analogy that clicks for you';
    content.appendChild(heading);

    const cards = document.createElement('div');
    cards.className = 'analogy-cards';
    for (const analogy of session.analogies) {
      const card = document.createElement('article');
      card.className = 'analogy-card';
      if (analogy.id === session.chosen_analogy_id) {
        card.classList.add('chosen');
      }
      const title = document.createElement('h3');
      title.textContent = analogy.title;
      const scenario = document.createElement('p');
      scenario.textContent = analogy.scenario;
      const mappings = document.createElement('ul');
      for (const mapping of analogy.mappings) {
        const item = document.createElement('li');
        item.textContent = `${mapping.concept_component} = ${mapping.analogy_component}`;
        mappings.appendChild(item);
      }
      const pick = document.createElement('button');
      pick.textContent = 'Use this analogy';
      pick.disabled = state.busy;
      pick.addEventListener('click', () => void this.chooseAnalogy(analogy.id));
      card.append(title, scenario, mappings, pick);
      cards.appendChild(card);
    }
    content.appendChild(cards);
  }

  private renderStoryboardStep(content: HTMLElement, state: WizardState): void {
    const session = state.session;
    if (!session) {
      return;
    }
    const heading = document.createElement('h2');
    heading.textContent = 'Storyboard';
    content.appendChild(heading);

    if (!session.storyboard) {
      const generate = document.createElement('button');
      generate.className = 'primary';
      generate.textContent = 'Generate the four-scene storyboard';
      generate.disabled = state.busy;
      generate.addEventListener('click', () => void this.generateStoryboard());
      content.appendChild(generate);
      return;
    }

    const narrative = document.createElement('p');
    narrative.className = 'narrative';
    narrative.textContent = session.storyboard.narrative;
    content.appendChild(narrative);

    const grid = document.createElement('div');
    grid.className = 'scene-grid';
    for (const scene of session.storyboard.scenes) {
      grid.appendChild(this.sceneCard(scene, state));
    }
    content.appendChild(grid);

    const toVideo = document.createElement('button');
    toVideo.className = 'primary';
    toVideo.textContent = 'Continue to video';
    toVideo.disabled =
      state.busy || session.storyboard.scenes.some((scene) => scene.image === null);
    toVideo.addEventListener('click', () => this.goToStep(4));
    content.appendChild(toVideo);
  }

  private sceneCard(scene: SceneDoc, state: WizardState): HTMLElement {
    const card = document.createElement('article');
    card.className = 'scene-card';
    card.dataset.sceneIndex = String(scene.index);

    const title = document.createElement('h3');
    title.textContent = `Scene ${scene.index}`;
    card.appendChild(title);

    if (scene.image) {
      const image = document.createElement('img');
      image.src = this.api.blobUrl(scene.image.hash);
      image.alt = `Scene ${scene.index}`;
      card.appendChild(image);
    } else {
      const placeholder = document.createElement('div');
      placeholder.className = 'image-placeholder';
      placeholder.textContent = 'image pending regeneration';
      card.appendChild(placeholder);
    }

    const warnings = sceneWarnings(scene);
    if (warnings.length > 0) {
      const badge = document.createElement('div');
      badge.className = 'coverage-warning';
      badge.textContent = `missing: ${warnings.join(', ')}`;
      const fix = document.createElement('button');
      fix.className = 'regenerate';
      fix.textContent = 'Regenerate image';
      fix.disabled = state.busy;
      fix.addEventListener('click', () => void this.regenerateScene(scene.index));
      badge.appendChild(fix);
      card.appendChild(badge);
    }

    const description = document.createElement('textarea');
    description.className = 'scene-description';
    description.value = scene.description;

    const prompt = document.createElement('textarea');
    prompt.className = 'scene-prompt';
    prompt.value = scene.image_prompt;

    const save = document.createElement('button');
    save.textContent = 'Save edits';
    save.disabled = state.busy;
    save.addEventListener('click', () =>
      void this.saveScene(scene.index, description.value, prompt.value),
    );

    const regen = document.createElement('button');
    regen.className = 'regenerate-secondary';
    regen.textContent = 'Regenerate';
    regen.disabled = state.busy;
    regen.addEventListener('click', () => void this.regenerateScene(scene.index));

    if (scene.edited_by_user) {
      const flag = document.createElement('span');
      flag.className = 'edited-flag';
      flag.textContent = 'edited';
      card.appendChild(flag);
    }

    card.append(description, prompt, save, regen);
    return card;
  }

  private renderVideoStep(content: HTMLElement, state: WizardState): void {
    const session = state.session;
    if (!session) {
      return;
    }
    const heading = document.createElement('h2');
    heading.textContent = 'Animated video';
    content.appendChild(heading);

    if (session.video) {
      const done = document.createElement('p');
      done.className = 'video-ready';
      done.textContent = 'Your video is ready.';
      const link = document.createElement('a');
      link.className = 'video-link';
      link.href = this.api.blobUrl(session.video.hash);
      link.download = videoFileName(session.video.media_type);
      link.textContent = `Download (${session.video.media_type})`;
      content.append(done, link);
      const rerender = document.createElement('button');
      rerender.textContent = 'Render again';
      rerender.disabled = state.busy;
      rerender.addEventListener('click', () => void this.renderVideo());
      content.appendChild(rerender);
      return;
    }

    const render = document.createElement('button');
    render.className = 'primary render-video';
    render.textContent = 'Assemble the video';
    render.disabled = state.busy || session.state !== 'storyboard_ready';
    render.addEventListener('click', () => void this.renderVideo());
    content.appendChild(render);
  }
}

export function mountWizard(root: HTMLElement, baseUrl = ''): Wizard {
  const wizard = new Wizard(root, new ApiClient(baseUrl));
  wizard.start();
  return wizard;
}
