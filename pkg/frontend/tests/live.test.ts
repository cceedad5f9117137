/** Round trip against a live service process.
 *
 * Spawns the `triald` server, creates a matched-randomization trial,
 * enrolls a 3-person batch through the typed client, and checks that the
 * rendered assignment cards show exactly the arms the service logged.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { TrialApi } from "../src/api.js";
import { renderAssignments } from "../src/views.js";

const PORT = 18000 + Math.floor(Math.random() * 2000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;

async function waitForServer(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      await fetch(`${BASE}/trials/none/schema`);
      return; // any HTTP response (even 404) means the server is up
    } catch {
      await new Promise((r) => setTimeout(r, 200));
    }
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  const dataDir = mkdtempSync(join(tmpdir(), "triald-live-"));
  server = spawn(
    "triald",
    ["--port", String(PORT), "--data-dir", dataDir],
    { stdio: "ignore" },
  );
  await waitForServer();
}, 40_000);

afterAll(() => {
  server?.kill();
});

describe("enrollment round trip", () => {
  it("assigns a 3-person batch and renders the service's arms", async () => {
    const api = new TrialApi(BASE);
    const { trial_id } = await api.createTrial({
      config: {
        variant: "SMR",
        mti: 4,
        reservoir_warmup: 2,
        threshold: { kind: "dynamic", estimation: "E" },
      },
      schema: [
        ["age", "continuous", []],
        ["smoker", "binary", []],
      ],
      planned_n: 12,
      seed: 99,
    });

    const schema = await api.getSchema(trial_id);
    expect(schema.schema.map(([name]) => name)).toEqual(["age", "smoker"]);
    expect(schema.enrolled).toBe(0);

    const result = await api.enrollBatch(trial_id, [
      { id: "a1", age: 61, smoker: 1 },
      { id: "a2", age: 48, smoker: 0 },
      { id: "a3", age: 55, smoker: 1 },
    ]);
    expect(result.assignments).toHaveLength(3);

    const html = renderAssignments(result);
    // The cards show exactly what the service decided, card per person.
    for (const a of result.assignments) {
      expect(html).toContain(`<h3>${a.id}</h3>`);
      expect(html).toContain(`class="card arm-${a.arm}"`);
    }

    // Cross-check against the event log: the arms in the rendered cards
    // are the arms the service persisted.
    const feed = await api.getEvents(trial_id);
    const batchEvent = feed.events.find((e) => e.type === "batch");
    expect(batchEvent).toBeDefined();
    const logged = (
      batchEvent!.data as {
        assignments: { id: string; arm: number }[];
      }
    ).assignments;
    expect(
      result.assignments.map(({ id, arm }) => ({ id, arm })),
    ).toEqual(logged.map(({ id, arm }) => ({ id, arm })));
  }, 30_000);
});
