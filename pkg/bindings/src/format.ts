/**
 * Number formatting compatible with the engine's JSONL exports, which print
 * every float at nine significant digits in printf %g style: fixed notation
 * for decimal exponents in [-4, 8], exponential otherwise, trailing zeros
 * trimmed, exponents padded to two digits.
 */

export function formatG9(x: number): string {
  if (!Number.isFinite(x)) {
    throw new RangeError(`cannot format non-finite value ${x}`);
  }
  if (x === 0) {
    return Object.is(x, -0) ? "-0" : "0";
  }
  const sci = x.toExponential(8);
  const [mantissaRaw, expRaw] = sci.split("e");
  const exp = parseInt(expRaw, 10);
  if (exp < -4 || exp >= 9) {
    let mantissa = mantissaRaw;
    if (mantissa.includes(".")) {
      mantissa = mantissa.replace(/0+$/, "").replace(/\.$/, "");
    }
    const sign = exp < 0 ? "-" : "+";
    const digits = String(Math.abs(exp)).padStart(2, "0");
    return `${mantissa}e${sign}${digits}`;
  }
  let fixed = x.toFixed(8 - exp);
  if (fixed.includes(".")) {
    fixed = fixed.replace(/0+$/, "").replace(/\.$/, "");
  }
  return fixed;
}

/** True when a and b agree after rounding to `digits` significant digits. */
export function sigDigitsClose(a: number, b: number, digits: number = 9): boolean {
  if (a === b) return true;
  if (!Number.isFinite(a) || !Number.isFinite(b)) return a === b;
  const scale = Math.max(Math.abs(a), Math.abs(b));
  if (scale === 0) return true;
  return Math.abs(a - b) <= scale * Math.pow(10, 1 - digits);
}
