/** Text branch preprocessing: tokenization with the encoder's context cap
 * and signed hashed n-gram features. */

export const TOKEN_LIMIT = 77; // includes the SOS/EOS slots

/** Lowercased word tokens, truncated at the encoder limit. Two slots are
 * reserved for the sequence markers, matching the convention the limit is
 * quoted with. */
export function tokenize(sentence: string, limit: number = TOKEN_LIMIT): string[] {
  const words = sentence.toLowerCase().split(/[^a-z0-9']+/).filter((w) => w.length > 0);
  return words.slice(0, Math.max(0, limit - 2));
}

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** Signed bag of unigrams + bigrams hashed into `buckets` dimensions,
 * L2-scaled so sentence length does not dominate. */
export function hashedFeatures(tokens: string[], buckets: number): Float64Array {
  const out = new Float64Array(buckets);
  const grams: string[] = [...tokens];
  for (let i = 0; i + 1 < tokens.length; i++) grams.push(`${tokens[i]} ${tokens[i + 1]}`);
  for (const gram of grams) {
    const h = fnv1a(gram);
    const sign = (h & 1) === 0 ? 1.0 : -1.0;
    out[(h >>> 1) % buckets] += sign;
  }
  let norm = 0;
  for (const v of out) norm += v * v;
  if (norm > 0) {
    norm = Math.sqrt(norm);
    for (let i = 0; i < buckets; i++) out[i] /= norm;
  }
  return out;
}

export function wordCount(sentence: string): number {
  return sentence.toLowerCase().split(/[^a-z0-9']+/).filter((w) => w.length > 0).length;
}
