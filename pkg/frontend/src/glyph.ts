/**
 * Bar-glyph geometry for feature vectors. Candidates in this pipeline are
 * plain vectors, so the UI draws each one as a signed bar chart: one bar per
 * component, upward for positive values, downward for negative. The same
 * value scale is shared between a candidate and its exemplars so bars are
 * visually comparable across the whole card.
 */

export interface Bar {
  x: number;
  y: number;
  width: number;
  height: number;
  negative: boolean;
}

export interface Glyph {
  width: number;
  height: number;
  baseline: number;
  bars: Bar[];
}

const GAP_FRACTION = 0.2;

/** Largest |component| across several vectors; 1 when everything is zero. */
export function sharedScale(vectors: number[][]): number {
  let max = 0;
  for (const v of vectors) {
    for (const x of v) {
      const a = Math.abs(x);
      if (a > max) max = a;
    }
  }
  return max > 0 ? max : 1;
}

export function barGlyph(
  features: number[],
  scale: number,
  width = 120,
  height = 60,
): Glyph {
  if (features.length === 0 || scale <= 0) {
    return { width, height, baseline: height / 2, bars: [] };
  }
  const baseline = height / 2;
  const slot = width / features.length;
  const barWidth = slot * (1 - GAP_FRACTION);
  const bars: Bar[] = features.map((value, i) => {
    const h = (Math.abs(value) / scale) * baseline;
    return {
      x: i * slot + (slot - barWidth) / 2,
      y: value >= 0 ? baseline - h : baseline,
      width: barWidth,
      height: h,
      negative: value < 0,
    };
  });
  return { width, height, baseline, bars };
}

/** SVG markup for a glyph; used for both candidates and exemplar thumbnails. */
export function glyphSvg(glyph: Glyph, cssClass = "glyph"): string {
  const rects = glyph.bars
    .map(
      (b) =>
        `<rect x="${fmt(b.x)}" y="${fmt(b.y)}" width="${fmt(b.width)}" ` +
        `height="${fmt(b.height)}" class="${b.negative ? "bar neg" : "bar"}"/>`,
    )
    .join("");
  return (
    `<svg class="${cssClass}" viewBox="0 0 ${glyph.width} ${glyph.height}" ` +
    `preserveAspectRatio="none">` +
    `<line x1="0" y1="${fmt(glyph.baseline)}" x2="${glyph.width}" ` +
    `y2="${fmt(glyph.baseline)}" class="axis"/>${rects}</svg>`
  );
}

function fmt(v: number): string {
  return Number(v.toFixed(3)).toString();
}
