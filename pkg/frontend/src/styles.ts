/** Grouping of style traits for the style picker. */

import type { StyleClass, StyleTrait } from "./types";

/** Display order of the three style classes in the picker. */
export const STYLE_CLASS_ORDER: StyleClass[] = [
  "positive",
  "neutral",
  "negative",
];

export interface StyleGroup {
  class: StyleClass;
  styles: string[];
}

/**
 * Group catalog traits into exactly one group per class, in the fixed
 * display order, preserving the catalog's order within each group.
 * Classes with no traits are still present (empty), so the picker's
 * groups always mirror the catalog's three classes.
 */
export function groupStyles(traits: StyleTrait[]): StyleGroup[] {
  const byClass = new Map<StyleClass, string[]>(
    STYLE_CLASS_ORDER.map((c) => [c, []]),
  );
  for (const trait of traits) {
    const bucket = byClass.get(trait.class);
    if (bucket === undefined) {
      throw new Error(`unknown style class: ${trait.class}`);
    }
    bucket.push(trait.name);
  }
  return STYLE_CLASS_ORDER.map((c) => ({
    class: c,
    styles: byClass.get(c)!,
  }));
}
