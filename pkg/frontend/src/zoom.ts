/**
 * Wheel-zoom and drag-pan for the image viewports, as a CSS transform.
 * Pure transform arithmetic is separated from event wiring for testability.
 */

export interface ViewTransform {
  scale: number;
  x: number;
  y: number;
}

export const IDENTITY: ViewTransform = { scale: 1, x: 0, y: 0 };
const MIN_SCALE = 1;
const MAX_SCALE = 8;

export function zoomAt(t: ViewTransform, factor: number, cx: number, cy: number): ViewTransform {
  const scale = Math.min(MAX_SCALE, Math.max(MIN_SCALE, t.scale * factor));
  const applied = scale / t.scale;
  // keep the cursor position fixed while scaling around it
  const x = cx - applied * (cx - t.x);
  const y = cy - applied * (cy - t.y);
  return clampPan({ scale, x, y });
}

export function panBy(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return clampPan({ scale: t.scale, x: t.x + dx, y: t.y + dy });
}

function clampPan(t: ViewTransform): ViewTransform {
  if (t.scale === 1) return { scale: 1, x: 0, y: 0 };
  return t;
}

export function toCss(t: ViewTransform): string {
  return `translate(${t.x}px, ${t.y}px) scale(${t.scale})`;
}

/** Attach wheel/drag listeners to every viewport under root. */
export function attachZoomPan(root: ParentNode): void {
  root.querySelectorAll<HTMLElement>(".viewport").forEach((vp) => {
    let t = { ...IDENTITY };
    const img = vp.querySelector("img");
    if (!img) return;
    const apply = () => {
      img.style.transform = toCss(t);
    };
    vp.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const rect = vp.getBoundingClientRect();
      const factor = (ev as WheelEvent).deltaY < 0 ? 1.2 : 1 / 1.2;
      t = zoomAt(t, factor, (ev as WheelEvent).clientX - rect.left,
        (ev as WheelEvent).clientY - rect.top);
      apply();
    }, { passive: false });
    let dragging = false;
    let last: [number, number] = [0, 0];
    vp.addEventListener("pointerdown", (ev) => {
      dragging = true;
      last = [(ev as PointerEvent).clientX, (ev as PointerEvent).clientY];
      vp.setPointerCapture((ev as PointerEvent).pointerId);
    });
    vp.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      const pe = ev as PointerEvent;
      t = panBy(t, pe.clientX - last[0], pe.clientY - last[1]);
      last = [pe.clientX, pe.clientY];
      apply();
    });
    vp.addEventListener("pointerup", () => {
      dragging = false;
    });
  });
}
