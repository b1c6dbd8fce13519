import init, { weight_heatmap, compare_tiling, rotate_slide_hue, slide_rgba } from "./pkg/vmstain_web.js";

const HUE_SIDE = 256;

function paint(canvas, side, rgba) {
  canvas.width = side;
  canvas.height = side;
  const img = new ImageData(new Uint8ClampedArray(rgba), side, side);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function num(section, name) {
  return Number(section.querySelector(`[name=${name}]`).value);
}

function guarded(section, fn) {
  const out = section.querySelector("output");
  return () => {
    out.classList.remove("err");
    try {
      fn(out);
    } catch (e) {
      out.classList.add("err");
      out.textContent = e.message ?? String(e);
    }
  };
}

await init();

const w = document.getElementById("weights");
const drawWeights = guarded(w, (out) => {
  const side = num(w, "side");
  const view = weight_heatmap(side, num(w, "n"), num(w, "m"));
  paint(w.querySelector("canvas"), side, view.rgba);
  const [corner, edge, center, count] = view.stats;
  out.textContent = `${count} patches; corner ${corner}, edge ${edge}, centre ${center}`;
});
w.querySelector("button").onclick = drawWeights;

const t = document.getElementById("tiling");
const drawTiling = guarded(t, (out) => {
  const side = num(t, "side");
  const seed = BigInt(num(t, "seed"));
  const view = compare_tiling(side, num(t, "n"), num(t, "m"), num(t, "jitter"), seed);
  paint(t.querySelector("[data-k=slide]"), side, slide_rgba(side, seed));
  paint(t.querySelector("[data-k=hard]"), side, view.hard);
  paint(t.querySelector("[data-k=blended]"), side, view.blended);
  out.textContent =
    `seam discontinuity: hard ${view.seam_hard.toExponential(3)}, ` +
    `blended ${view.seam_blended.toExponential(3)}`;
});
t.querySelector("button").onclick = drawTiling;
t.querySelector("[name=jitter]").oninput = drawTiling;

const h = document.getElementById("hue");
const drawHue = guarded(h, (out) => {
  const view = rotate_slide_hue(HUE_SIDE, num(h, "deg"), BigInt(num(h, "seed")));
  paint(h.querySelector("[data-k=rotated]"), HUE_SIDE, view.rotated);
  paint(h.querySelector("[data-k=value]"), HUE_SIDE, view.value);
  out.textContent =
    `value loss ${view.value_loss.toExponential(2)}, histogram correlation ${view.hist_corr.toFixed(4)}`;
});
h.querySelectorAll("input").forEach((el) => (el.oninput = drawHue));

drawWeights();
drawTiling();
drawHue();
