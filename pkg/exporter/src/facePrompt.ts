/** Canonical face-attribute prompt construction.
 *
 * Must stay byte-identical with the engine's prompt builder: the prompt is
 * "mention, key: value, ..." with keys in the fixed order gender, race,
 * age, emotion (absent keys skipped).
 */

export const FACE_ATTR_ORDER = ["gender", "race", "age", "emotion"] as const;

export function buildFacePrompt(
  mention: string,
  attrs: Record<string, string>,
): string {
  const parts = [mention];
  for (const key of FACE_ATTR_ORDER) {
    if (key in attrs) parts.push(`${key}: ${attrs[key]}`);
  }
  return parts.join(", ");
}
