/**
 * splitmix64 and the Fisher-Yates shuffle driven by it.
 *
 * Fixed 64-bit integer arithmetic, so the scene order produced here is
 * bit-identical to the native library's (and to any other implementation
 * of the same scheme). BigInt keeps the wrap-around exact.
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

/** One step: returns [next state, output]. */
export function splitmix64Next(state: bigint): [bigint, bigint] {
  state = (state + GAMMA) & MASK64;
  let z = state;
  z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
  return [state, z ^ (z >> 31n)];
}

/** In-place Fisher-Yates, j = output mod (i + 1), walking i from the end. */
export function deterministicShuffle<T>(items: T[], seed: bigint): void {
  let state = seed & MASK64;
  for (let i = items.length - 1; i > 0; i--) {
    const [next, z] = splitmix64Next(state);
    state = next;
    const j = Number(z % BigInt(i + 1));
    [items[i], items[j]] = [items[j], items[i]];
  }
}
