import { mountWizard } from './wizard.js';

const root = document.getElementById('app');
if (root) {
  mountWizard(root);
}
