// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded prompt generators.

use std::ops::RangeInclusive;

use rand::Rng;

/// Uniform random prompt with a length drawn from `lens`.
pub fn random_prompt<R: Rng>(rng: &mut R, vocab: usize, lens: RangeInclusive<usize>) -> Vec<usize> {
    let len = rng.random_range(lens);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

/// `base[..1]`, `base[..2]`, …, `base`.
pub fn prefixes(base: &[usize]) -> Vec<Vec<usize>> {
    (1..=base.len()).map(|i| base[..i].to_vec()).collect()
}

/// Exactly `n` prompts, closed under taking prefixes.
///
/// Random base sequences are expanded into all of their prefixes; the last
/// base is cut short so that the total is `n`. Because every prompt's
/// prefixes are also present, the final-position keys of the corpus coincide
/// with the all-position keys of its base sequences.
pub fn prefix_closed_corpus<R: Rng>(
    rng: &mut R,
    vocab: usize,
    n: usize,
    lens: RangeInclusive<usize>,
) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let base = random_prompt(rng, vocab, lens.clone());
        for p in prefixes(&base) {
            if out.len() == n {
                break;
            }
            out.push(p);
        }
    }
    out
}
