/** Fixed 12-color class palette; colors assigned by registration order. */

export const PALETTE: readonly string[] = [
  "#e6194b",
  "#3cb44b",
  "#ffe119",
  "#4363d8",
  "#f58231",
  "#911eb4",
  "#46f0f0",
  "#f032e6",
  "#bcf60c",
  "#fabebe",
  "#008080",
  "#e6beff",
];

export function colorFor(registrationIndex: number): string {
  return PALETTE[registrationIndex % PALETTE.length]!;
}
