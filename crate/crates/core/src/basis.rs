//! Occupation-number basis shared by every module.
//!
//! Asset `l` (1-based) at level `d` (1-based) lives on the sequential site
//! `i = l + N(d - 1)`. Site `i` is stored in bit `i - 1` of an occupation
//! integer, and a set bit means the site is occupied (`x_{l,d} = 1`). The
//! Hamming weight of an occupation integer is therefore the particle number.

use crate::error::{Error, Result};

/// Occupation bitstring packed into an integer; bit `i` is site `i + 1`.
pub type Bits = u64;

/// Sequential 1-based site number of asset `l`, level `d`.
pub fn site_index(l: usize, d: usize, n_assets: usize) -> usize {
    l + n_assets * (d - 1)
}

/// Inverse of [`site_index`]: returns `(l, d)`, both 1-based.
pub fn site_to_asset_level(site: usize, n_assets: usize) -> (usize, usize) {
    let zero = site - 1;
    (zero % n_assets + 1, zero / n_assets + 1)
}

#[inline]
pub fn is_occupied(bits: Bits, site0: usize) -> bool {
    (bits >> site0) & 1 == 1
}

#[inline]
pub fn weight(bits: Bits) -> usize {
    bits.count_ones() as usize
}

/// Formats `bits` site-1-first, e.g. sites {1, 3} of 4 gives `"1010"`.
pub fn to_bitstring(bits: Bits, n_sites: usize) -> String {
    (0..n_sites)
        .map(|i| if is_occupied(bits, i) { '1' } else { '0' })
        .collect()
}

/// Parses a site-1-first bitstring.
pub fn from_bitstring(s: &str) -> Result<Bits> {
    if s.len() > 64 {
        return Err(Error::input(format!(
            "bitstring of length {} exceeds 64 sites",
            s.len()
        )));
    }
    s.chars().enumerate().try_fold(0u64, |acc, (i, c)| match c {
        '0' => Ok(acc),
        '1' => Ok(acc | (1 << i)),
        other => Err(Error::input(format!(
            "bitstring contains {other:?} at position {i}"
        ))),
    })
}

/// Binomial coefficient as `u128`; saturates rather than overflowing.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Iterates all `n`-bit integers of Hamming weight `m` in increasing order.
pub fn fixed_weight(n: usize, m: usize) -> FixedWeight {
    assert!(n <= 63, "fixed_weight supports at most 63 sites");
    let next = if m > n {
        None
    } else if m == 0 {
        Some(0)
    } else {
        Some((1u64 << m) - 1)
    };
    FixedWeight { n, next }
}

pub struct FixedWeight {
    n: usize,
    next: Option<Bits>,
}

impl Iterator for FixedWeight {
    type Item = Bits;

    fn next(&mut self) -> Option<Bits> {
        let cur = self.next?;
        // Gosper's hack
        self.next = if cur == 0 {
            None
        } else {
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            let nxt = (((r ^ cur) >> 2) / c) | r;
            (nxt < (1u64 << self.n)).then_some(nxt)
        };
        Some(cur)
    }
}
