//! Bounded search for valuations consistent with a fact set.

use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::FactSet;
use crate::bits::{BitString, WordParams};
use crate::eval::Valuation;
use crate::ops::OpSet;

/// Shape of candidate values: every variable ranges over the bitstrings whose
/// length is listed in `lengths`.
#[derive(Clone, Debug)]
pub struct Domain {
    pub vars: Vec<String>,
    pub lengths: Vec<usize>,
}

impl Domain {
    pub fn new(vars: impl IntoIterator<Item = String>, lengths: Vec<usize>) -> Self {
        Domain { vars: vars.into_iter().collect(), lengths }
    }

    fn values(&self) -> Vec<BitString> {
        let mut out = Vec::new();
        for &l in &self.lengths {
            assert!(l < 20, "exhaustive domain too large");
            for n in 0..(1u64 << l) {
                out.push(BitString::from_bits((0..l).map(|i| (n >> i) & 1 == 1)));
            }
        }
        out
    }
}

/// Every valuation over `domain` satisfying `sigma`, up to `limit` of them.
pub fn enumerate_consistent(sigma: &FactSet, domain: &Domain, ops: &OpSet, params: &WordParams, limit: usize) -> Vec<Valuation> {
    let values = domain.values();
    let mut out = Vec::new();
    if values.is_empty() && !domain.vars.is_empty() {
        return out;
    }
    let mut idx = alloc::vec![0usize; domain.vars.len()];
    loop {
        let mut eta = Valuation::new();
        for (v, &i) in domain.vars.iter().zip(&idx) {
            eta.bind(v, values[i].clone());
        }
        if sigma.satisfied_by(&eta, ops, params) {
            out.push(eta);
            if out.len() >= limit {
                return out;
            }
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return out;
            }
            idx[k] += 1;
            if idx[k] < values.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Random search: draws up to `tries` valuations and returns the first consistent one.
pub fn sample_consistent<R: RngCore>(
    sigma: &FactSet,
    domain: &Domain,
    ops: &OpSet,
    params: &WordParams,
    rng: &mut R,
    tries: usize,
) -> Option<Valuation> {
    if domain.lengths.is_empty() {
        return None;
    }
    for _ in 0..tries {
        let mut eta = Valuation::new();
        for v in &domain.vars {
            let l = domain.lengths[rng.next_u32() as usize % domain.lengths.len()];
            let mut b = BitString::zeros(l);
            for i in 0..l {
                b.set(i, rng.next_u32() & 1 == 1);
            }
            eta.bind(v, b);
        }
        if sigma.satisfied_by(&eta, ops, params) {
            return Some(eta);
        }
    }
    None
}
