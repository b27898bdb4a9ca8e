/**
 * Entry point: `?rater=NAME&study=ID` selects the rating screen;
 * `?view=results&study=ID` the owner's ratio table.
 */

import { StudyClient } from "./api.js";
import { RatingSession } from "./rating.js";
import { renderError, renderResults } from "./render.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const studyId = params.get("study") ?? "";
  const root = document.getElementById("app");
  if (!root) return;
  if (!studyId) {
    root.innerHTML = renderError("Missing ?study=ID in the URL.");
    return;
  }
  const client = new StudyClient(studyId);
  if (params.get("view") === "results") {
    try {
      root.innerHTML = renderResults(await client.fetchResults());
    } catch (err) {
      root.innerHTML = renderError(`Could not load results: ${String(err)}`);
    }
    return;
  }
  const rater = params.get("rater") ?? "";
  if (!rater) {
    root.innerHTML = renderError("Missing ?rater=NAME in the URL.");
    return;
  }
  const session = new RatingSession(client, rater, root);
  window.addEventListener("keydown", (ev) => session.handleKey(ev.key));
  await session.start();
}

void boot();
