import type { EditStatus } from './types.js';

export interface PollOptions {
  intervalMs?: number;
  maxPolls?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/** Poll a training job until it leaves the running state. Step counters
 * from the service only ever advance; going backwards indicates a broken
 * job identity and is reported as an error. Resolves with the terminal
 * status; calls `onUpdate` for every observation. */
export async function pollEditStatus(
  fetchStatus: (id: string) => Promise<EditStatus>,
  id: string,
  onUpdate: (status: EditStatus) => void,
  options: PollOptions = {},
): Promise<EditStatus> {
  const interval = options.intervalMs ?? 500;
  const maxPolls = options.maxPolls ?? 100000;
  const sleep = options.sleep ?? defaultSleep;
  let lastStep = -1;
  for (let i = 0; i < maxPolls; i++) {
    const status = await fetchStatus(id);
    if (status.step < lastStep) {
      throw new Error(`step counter went backwards: ${lastStep} -> ${status.step}`);
    }
    lastStep = status.step;
    onUpdate(status);
    if (status.state !== 'running') {
      return status;
    }
    await sleep(interval);
  }
  throw new Error(`job ${id} still running after ${maxPolls} polls`);
}

export function formatLosses(losses: Record<string, number> | null): string {
  if (!losses) return '';
  const parts = [];
  for (const key of ['l_sim', 'l_t', 'l_d', 'total']) {
    if (key in losses) parts.push(`${key}=${losses[key].toFixed(4)}`);
  }
  return parts.join('  ');
}
