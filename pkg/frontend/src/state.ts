// Minimal observable store; the wizard re-renders on every change.

export interface WizardState {
  session: import('./types.js').SessionDoc | null;
  stepIndex: number;
  busy: boolean;
  jobLabel: string;
  jobFraction: number;
  error: string | null;
}

export const initialState: WizardState = {
  session: null,
  stepIndex: 0,
  busy: false,
  jobLabel: '',
  jobFraction: 0,
  error: null,
};

export interface Store<T> {
  get(): T;
  set(partial: Partial<T>): void;
  subscribe(listener: () => void): () => void;
}

export function createStore<T>(initial: T): Store<T> {
  let state = initial;
  const listeners = new Set<() => void>();
  return {
    get: () => state,
    set(partial) {
      state = { ...state, ...partial };
      listeners.forEach((listener) => listener());
    },
    subscribe(listener) {
      listeners.add(listener);
      return () => listeners.delete(listener);
    },
  };
}
