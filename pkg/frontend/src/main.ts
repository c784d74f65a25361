// Bootstrap: one base-URL setting (persisted locally) plus an annotator id.

import { ReviewApp } from './app';

function setting(key: string, fallback: string): string {
  return window.localStorage.getItem(key) ?? fallback;
}

function init(): void {
  const baseInput = document.getElementById('base-url') as HTMLInputElement;
  const annotatorInput = document.getElementById('annotator') as HTMLInputElement;
  const connect = document.getElementById('connect') as HTMLButtonElement;
  const root = document.getElementById('screen')!;

  baseInput.value = setting('relabel.baseUrl', window.location.origin);
  annotatorInput.value = setting('relabel.annotator', '');

  connect.addEventListener('click', () => {
    const baseUrl = baseInput.value.trim();
    const annotator = annotatorInput.value.trim();
    if (!baseUrl || !annotator) {
      root.textContent = 'Set the service URL and an annotator id first.';
      return;
    }
    window.localStorage.setItem('relabel.baseUrl', baseUrl);
    window.localStorage.setItem('relabel.annotator', annotator);
    const app = new ReviewApp({ baseUrl, annotator, root });
    document.addEventListener('keydown', (event) => app.handleKey(event));
    void app.start();
  });
}

document.addEventListener('DOMContentLoaded', init);
