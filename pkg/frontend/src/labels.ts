/** Part vocabulary shared with the refinement service.
 *
 * The eight tokens are the exact strings the service accepts in stroke
 * payloads; sending anything else earns a 422 `bad_label_code`.  Colors
 * match the service's preview palette so the local drawing surface and the
 * returned preview panel agree visually.
 */

export const PART_TOKENS = [
  "Hair",
  "Face",
  "TopClothes",
  "BottomClothes",
  "LeftArm",
  "RightArm",
  "LeftLeg",
  "RightLeg",
] as const;

export type PartToken = (typeof PART_TOKENS)[number];

export function isPartToken(value: string): value is PartToken {
  return (PART_TOKENS as readonly string[]).includes(value);
}

/** Display color per part, mirroring the service preview palette. */
export const PART_COLORS: Record<PartToken, string> = {
  Hair: "#8b5e3c",
  Face: "#f2c9a0",
  TopClothes: "#4c72b0",
  BottomClothes: "#55a868",
  LeftArm: "#c44e52",
  RightArm: "#dd8452",
  LeftLeg: "#8172b3",
  RightLeg: "#937860",
};
