/** Console wiring: form handling, dashboard polling, event feed.
 *
 * Roles mirror the service: the enrollment role can submit batches but the
 * balance dashboard stays hidden (the service would refuse the report
 * anyway); the statistician sees everything. Enrollment is never
 * optimistic — cards render only from the server's response.
 */

import { ApiRequestError, TrialApi, type TrialRecord } from "./api.js";
import type { BatchResult, TrialSchema } from "./types.js";
import {
  renderAssignments,
  renderBalance,
  renderBlindedNotice,
  renderEmptyState,
  renderEnrollmentForm,
  renderErrorBanner,
  renderEventFeed,
  renderMatchGraph,
  renderStaleBanner,
} from "./views.js";

interface ConsoleConfig {
  baseUrl: string;
  trialId: string;
  role: "enrollment" | "statistician";
  roleToken?: string;
  pollMs?: number;
}

export class TrialConsole {
  private readonly api: TrialApi;
  private schema: TrialSchema | null = null;
  private lastSeq = -1;
  private lastBatch: BatchResult | null = null;
  private queue: TrialRecord[] = [];
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly config: ConsoleConfig,
  ) {
    this.api = new TrialApi(config.baseUrl, config.roleToken);
  }

  async start(): Promise<void> {
    this.schema = await this.api.getSchema(this.config.trialId);
    this.renderShell();
    await this.refreshDashboard();
    this.timer = setInterval(
      () => void this.poll(),
      this.config.pollMs ?? 4000,
    );
  }

  stop(): void {
    if (this.timer) clearInterval(this.timer);
    this.timer = null;
  }

  private section(name: string): HTMLElement {
    return this.root.querySelector(`[data-panel="${name}"]`) as HTMLElement;
  }

  private renderShell(): void {
    this.root.innerHTML = `
<div data-panel="banner"></div>
<div class="columns">
  <div data-panel="form"></div>
  <div data-panel="assignments"></div>
</div>
<div data-panel="dashboard"></div>
<div data-panel="events"></div>`;
    this.section("form").innerHTML = renderEnrollmentForm(this.schema!);
    const form = this.root.querySelector("#enroll-form") as HTMLFormElement;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.onAddRow(form);
    });
  }

  private readForm(form: HTMLFormElement): TrialRecord {
    const record: TrialRecord = { id: "" };
    for (const [name] of this.schema!.schema) {
      const el = form.elements.namedItem(name) as
        | HTMLInputElement
        | HTMLSelectElement;
      record[name] = el.value === "" ? null : el.value;
    }
    record.id = (form.elements.namedItem("id") as HTMLInputElement).value;
    return record;
  }

  private async onAddRow(form: HTMLFormElement): Promise<void> {
    this.queue.push(this.readForm(form));
    // Submit immediately; batching several rows is a held-submit variant.
    try {
      const result = await this.api.enrollBatch(
        this.config.trialId,
        this.queue,
      );
      this.queue = [];
      this.lastBatch = result;
      this.section("assignments").innerHTML = renderAssignments(result);
      this.section("banner").innerHTML = "";
      form.reset();
      await this.refreshDashboard();
    } catch (err) {
      // Keep the queue and the form: the operator fixes and resubmits.
      if (err instanceof ApiRequestError) {
        this.queue = [];
        this.section("banner").innerHTML = renderErrorBanner({
          detail: err.detail,
        });
      } else {
        this.section("banner").innerHTML = renderStaleBanner();
      }
    }
  }

  private async refreshDashboard(): Promise<void> {
    const panel = this.section("dashboard");
    if (this.config.role === "enrollment") {
      panel.innerHTML = renderBlindedNotice();
      return;
    }
    try {
      const report = await this.api.getReport(this.config.trialId);
      panel.innerHTML =
        renderBalance(report) +
        renderMatchGraph(report, this.lastBatch?.pairs_broken ?? []);
    } catch (err) {
      if (err instanceof ApiRequestError && err.status === 409) {
        panel.innerHTML = renderEmptyState(this.schema!);
      } else {
        this.section("banner").innerHTML = renderStaleBanner();
      }
    }
  }

  private async poll(): Promise<void> {
    if (this.config.role === "enrollment") return;
    try {
      const feed = await this.api.getEvents(this.config.trialId, this.lastSeq);
      if (feed.events.length) {
        this.lastSeq = feed.events[feed.events.length - 1].seq;
        this.section("events").innerHTML = renderEventFeed(feed);
        await this.refreshDashboard();
      }
      this.section("banner").innerHTML = "";
    } catch {
      this.section("banner").innerHTML = renderStaleBanner();
    }
  }
}

export function mount(root: HTMLElement, config: ConsoleConfig): TrialConsole {
  const console_ = new TrialConsole(root, config);
  void console_.start();
  return console_;
}
