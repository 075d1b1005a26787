//! Symbolic expansion of the generalized environmental cumulants into signed
//! products of D-blocks, by the direct sum formula and by the recursion, plus
//! numerical evaluation with delta-pinning of the dotted block.
//!
//! Index bookkeeping: a cumulant of order `n` with `k` left indices carries
//! tau indices `1..=k` and s indices `1..=n-k`. Each term partitions both
//! index sets into contiguous blocks; exactly one block (the one holding the
//! lowest indices) is dotted, meaning its leading time is delta-pinned to the
//! current time in the generator integrals.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;
use num_complex::Complex64;

use crate::bath::{d_block, BathModel, DBlockArgs};
use crate::{Error, Result};

/// Contiguous 1-based inclusive index interval; `None` is the empty side.
pub type IdxRange = Option<(usize, usize)>;

fn range_len(r: IdxRange) -> usize {
    r.map_or(0, |(lo, hi)| hi - lo + 1)
}

fn make_range(lo: usize, hi: usize) -> IdxRange {
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// One D-factor of a cumulant term: a contiguous tau interval, a contiguous s
/// interval, and the dotted flag marking the time-differentiated factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BlockSpec {
    pub tau: IdxRange,
    pub s: IdxRange,
    pub dotted: bool,
}

impl BlockSpec {
    pub fn total_len(&self) -> usize {
        range_len(self.tau) + range_len(self.s)
    }
}

/// Signed product of D-blocks. `blocks[0]` is the dotted block; the remaining
/// blocks are kept sorted so that equal products merge (D-block values are
/// scalars and commute). The integer coefficient carries merged signs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CumulantTerm {
    pub coeff: i64,
    pub blocks: Vec<BlockSpec>,
}

/// Which delta of the dotted block a pinned term carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pin {
    /// tau_1 = t
    TauOne,
    /// s_1 = t
    SOne,
}

/// A cumulant term with one delta resolved: the pinned variable is replaced
/// by the current time `t` during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnedTerm {
    pub base: CumulantTerm,
    pub pin: Pin,
}

/// Structural vanishing rules used to discard terms before integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VanishingRule {
    None,
    /// `<B_t> = 0`: any block of total size 1 vanishes.
    MeanZero,
    /// Mean-zero Gaussian bath: any block of odd total size vanishes.
    GaussianMeanZero,
}

fn canonicalize(raw: Vec<CumulantTerm>) -> Vec<CumulantTerm> {
    let mut merged: BTreeMap<Vec<BlockSpec>, i64> = BTreeMap::new();
    for mut term in raw {
        debug_assert!(term.blocks[0].dotted);
        term.blocks[1..].sort_unstable();
        *merged.entry(term.blocks).or_insert(0) += term.coeff;
    }
    merged
        .into_iter()
        .filter(|(_, coeff)| *coeff != 0)
        .map(|(blocks, coeff)| CumulantTerm { coeff, blocks })
        .collect()
}

/// Nondecreasing sequences `0 <= v_1 <= ... <= v_q = end`.
fn nondecreasing_sequences(q: usize, end: usize) -> Vec<Vec<usize>> {
    fn go(acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, left: usize, min: usize, end: usize) {
        if left == 1 {
            if end >= min {
                let mut seq = acc.clone();
                seq.push(end);
                out.push(seq);
            }
            return;
        }
        for v in min..=end {
            acc.push(v);
            go(acc, out, left - 1, v, end);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut out, q, 0, end);
    out
}

fn check_nk(n: usize, k: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::OrderOutOfRange { n, max: usize::MAX });
    }
    if k > n {
        return Err(Error::KOutOfRange { n, k });
    }
    Ok(())
}

/// Direct sum formula: enumerate all split sequences over `q = 1..=n` blocks,
/// drop candidates containing a doubly empty block (rule of notation), and
/// canonicalize with merged integer coefficients.
pub fn expand_direct(n: usize, k: usize) -> Result<Vec<CumulantTerm>> {
    check_nk(n, k)?;
    let m = n - k;
    let mut raw = Vec::new();
    for q in 1..=n {
        let sign = if q % 2 == 1 { 1 } else { -1 };
        for kseq in nondecreasing_sequences(q, k) {
            'mseq: for mseq in nondecreasing_sequences(q, m) {
                let mut blocks = Vec::with_capacity(q);
                let mut prev_k = 0;
                let mut prev_m = 0;
                for j in 0..q {
                    let tau = make_range(prev_k + 1, kseq[j]);
                    let s = make_range(prev_m + 1, mseq[j]);
                    if tau.is_none() && s.is_none() {
                        continue 'mseq;
                    }
                    blocks.push(BlockSpec { tau, s, dotted: j == 0 });
                    prev_k = kseq[j];
                    prev_m = mseq[j];
                }
                raw.push(CumulantTerm { coeff: sign, blocks });
            }
        }
    }
    Ok(canonicalize(raw))
}

/// Recursive formula: the full dotted block minus lower cumulants times a
/// trailing plain block over the highest indices. Memoized over the block
/// sizes; output canonicalized identically to [`expand_direct`].
pub fn expand_recursive(n: usize, k: usize) -> Result<Vec<CumulantTerm>> {
    check_nk(n, k)?;
    let mut memo: BTreeMap<(usize, usize), Vec<CumulantTerm>> = BTreeMap::new();
    Ok(expand_rec_memo(k, n - k, &mut memo).clone())
}

fn expand_rec_memo<'a>(
    k: usize,
    m: usize,
    memo: &'a mut BTreeMap<(usize, usize), Vec<CumulantTerm>>,
) -> &'a Vec<CumulantTerm> {
    if !memo.contains_key(&(k, m)) {
        let mut raw = Vec::new();
        // full dotted block
        raw.push(CumulantTerm {
            coeff: 1,
            blocks: alloc::vec![BlockSpec {
                tau: make_range(1, k),
                s: make_range(1, m),
                dotted: true,
            }],
        });
        for l in 0..=k {
            for r in 0..=m {
                if l == 0 && r == 0 {
                    continue; // no zero-size cumulant
                }
                if l == k && r == m {
                    continue; // trailing block doubly empty, dropped by the rule
                }
                let tail = BlockSpec {
                    tau: make_range(l + 1, k),
                    s: make_range(r + 1, m),
                    dotted: false,
                };
                let inner = expand_rec_memo(l, r, memo).clone();
                for term in inner {
                    let mut blocks = term.blocks;
                    blocks.push(tail);
                    raw.push(CumulantTerm { coeff: -term.coeff, blocks });
                }
            }
        }
        let canon = canonicalize(raw);
        memo.insert((k, m), canon);
    }
    memo.get(&(k, m)).unwrap()
}

/// Remove every term containing a block that vanishes identically under the
/// rule.
pub fn suppress_vanishing(terms: &[CumulantTerm], rule: VanishingRule) -> Vec<CumulantTerm> {
    terms
        .iter()
        .filter(|term| {
            term.blocks.iter().all(|b| match rule {
                VanishingRule::None => true,
                VanishingRule::MeanZero => b.total_len() != 1,
                VanishingRule::GaussianMeanZero => b.total_len() % 2 == 0,
            })
        })
        .cloned()
        .collect()
}

/// Resolve the dotted block's delta sum into explicit pinned copies: one for
/// `tau_1 = t` when the dotted block holds tau_1, one for `s_1 = t` when it
/// holds s_1 (both when it holds both).
pub fn pin_terms(terms: &[CumulantTerm]) -> Vec<PinnedTerm> {
    let mut out = Vec::new();
    for term in terms {
        let dotted = &term.blocks[0];
        if range_len(dotted.tau) > 0 {
            out.push(PinnedTerm { base: term.clone(), pin: Pin::TauOne });
        }
        if range_len(dotted.s) > 0 {
            out.push(PinnedTerm { base: term.clone(), pin: Pin::SOne });
        }
    }
    out
}

/// Time lists of one block under a full variable assignment.
pub(crate) fn eval_pinned_block_args(block: &BlockSpec, taus: &[f64], ss: &[f64]) -> DBlockArgs {
    block_times(block, taus, ss)
}

fn block_times(block: &BlockSpec, taus: &[f64], ss: &[f64]) -> DBlockArgs {
    let collect = |r: IdxRange, src: &[f64]| -> Vec<f64> {
        match r {
            None => Vec::new(),
            Some((lo, hi)) => src[lo - 1..=hi - 1].to_vec(),
        }
    };
    DBlockArgs { taus: collect(block.tau, taus), ss: collect(block.s, ss) }
}

/// Evaluate a term as a plain product of D-blocks (dotted block treated as an
/// undifferentiated D) at explicit time assignments. Test oracle for the
/// direct-vs-recursive equivalence.
pub fn eval_term_plain(
    term: &CumulantTerm,
    taus: &[f64],
    ss: &[f64],
    bath: &BathModel,
) -> Result<Complex64> {
    let mut acc = Complex64::new(term.coeff as f64, 0.0);
    for block in &term.blocks {
        acc *= d_block(bath, &block_times(block, taus, ss))?;
        if acc.norm() == 0.0 {
            return Ok(acc);
        }
    }
    Ok(acc)
}

/// Evaluate a pinned term: substitute the pinned variable with `t`, evaluate
/// each block via [`d_block`], multiply with the sign. The arrays `taus` and
/// `ss` carry the full variable assignment; the pinned slot is overwritten.
pub fn eval_pinned(
    term: &PinnedTerm,
    taus: &[f64],
    ss: &[f64],
    t: f64,
    bath: &BathModel,
) -> Result<Complex64> {
    let mut taus_full = taus.to_vec();
    let mut ss_full = ss.to_vec();
    match term.pin {
        Pin::TauOne => taus_full[0] = t,
        Pin::SOne => ss_full[0] = t,
    }
    eval_term_plain(&term.base, &taus_full, &ss_full, bath)
}

/// Plain-text rendering of a term list, e.g.
/// `+ dD(τ1;s1) − dD(τ1)·D(s1)`.
pub fn render_terms(terms: &[CumulantTerm]) -> String {
    let mut out = String::new();
    for (i, term) in terms.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push(if term.coeff >= 0 { '+' } else { '−' });
        out.push(' ');
        if term.coeff.abs() != 1 {
            let _ = write!(out, "{}·", term.coeff.abs());
        }
        for (j, block) in term.blocks.iter().enumerate() {
            if j > 0 {
                out.push('·');
            }
            out.push_str(if block.dotted { "dD(" } else { "D(" });
            let mut wrote = false;
            if let Some((lo, hi)) = block.tau {
                for idx in lo..=hi {
                    if wrote {
                        out.push(' ');
                    }
                    let _ = write!(out, "τ{idx}");
                    wrote = true;
                }
            }
            if let Some((lo, hi)) = block.s {
                if wrote {
                    out.push(';');
                }
                let mut first = true;
                for idx in lo..=hi {
                    if !first {
                        out.push(' ');
                    }
                    let _ = write!(out, "s{idx}");
                    first = false;
                }
            }
            out.push(')');
        }
    }
    out
}

/// Precomputed, suppressed, pinned term lists for every `(n, k)` up to a
/// maximum order. Built once; immutable and shareable afterwards.
pub struct CumulantExpansion {
    max_order: usize,
    rule: VanishingRule,
    pinned: BTreeMap<(usize, usize), Vec<PinnedTerm>>,
}

impl CumulantExpansion {
    pub fn new(max_order: usize, rule: VanishingRule) -> Result<Self> {
        let mut pinned = BTreeMap::new();
        for n in 1..=max_order {
            for k in 0..=n {
                let terms = expand_recursive(n, k)?;
                let kept = suppress_vanishing(&terms, rule);
                pinned.insert((n, k), pin_terms(&kept));
            }
        }
        Ok(Self { max_order, rule, pinned })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn rule(&self) -> VanishingRule {
        self.rule
    }

    pub fn pinned_terms(&self, n: usize, k: usize) -> Result<&[PinnedTerm]> {
        self.pinned
            .get(&(n, k))
            .map(Vec::as_slice)
            .ok_or(Error::OrderOutOfRange { n, max: self.max_order })
    }
}

#[cfg(test)]
mod tests {
    extern crate std;

    use super::*;
    use crate::bath::BathModel;
    use alloc::vec;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn coverage_ok(term: &CumulantTerm, k: usize, m: usize) -> bool {
        let mut tau_seen = vec![0usize; k];
        let mut s_seen = vec![0usize; m];
        for block in &term.blocks {
            if let Some((lo, hi)) = block.tau {
                for i in lo..=hi {
                    tau_seen[i - 1] += 1;
                }
            }
            if let Some((lo, hi)) = block.s {
                for i in lo..=hi {
                    s_seen[i - 1] += 1;
                }
            }
        }
        tau_seen.iter().all(|&c| c == 1) && s_seen.iter().all(|&c| c == 1)
    }

    #[test]
    fn first_order_single_dotted_term() {
        let terms = expand_direct(1, 1).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].coeff, 1);
        assert_eq!(
            terms[0].blocks,
            vec![BlockSpec { tau: Some((1, 1)), s: None, dotted: true }]
        );
        let base = expand_recursive(1, 0).unwrap();
        assert_eq!(base.len(), 1);
        assert_eq!(base[0].blocks, vec![BlockSpec { tau: None, s: Some((1, 1)), dotted: true }]);
    }

    #[test]
    fn second_order_structures() {
        // (n=2, k=2): dD(t1 t2) - dD(t1) D(t2)
        let terms = expand_recursive(2, 2).unwrap();
        assert_eq!(terms.len(), 2);
        // (n=2, k=1): joint dotted minus two singleton products
        let terms = expand_direct(2, 1).unwrap();
        assert_eq!(terms.len(), 3);
        let joint = terms
            .iter()
            .find(|t| t.blocks.len() == 1)
            .expect("joint dotted block present");
        assert_eq!(joint.coeff, 1);
        for t in &terms {
            if t.blocks.len() == 2 {
                assert_eq!(t.coeff, -1);
            }
        }
    }

    #[test]
    fn displayed_term_counts_orders_one_to_three() {
        let counts = |n: usize| -> Vec<usize> {
            (0..=n).map(|k| expand_recursive(n, k).unwrap().len()).collect()
        };
        assert_eq!(counts(1), vec![1, 1]);
        assert_eq!(counts(2), vec![2, 3, 2]);
        assert_eq!(counts(3), vec![4, 7, 7, 4]);
    }

    #[test]
    fn third_order_middle_has_single_coefficient_two() {
        for k in [1usize, 2] {
            let terms = expand_recursive(3, k).unwrap();
            let twos: Vec<_> = terms.iter().filter(|t| t.coeff.abs() == 2).collect();
            assert_eq!(twos.len(), 1);
            assert_eq!(twos[0].coeff, 2);
            assert_eq!(twos[0].blocks.len(), 3);
        }
    }

    #[test]
    fn fourth_order_counts_under_mean_zero() {
        let counts: Vec<usize> = (0..=4)
            .map(|k| {
                suppress_vanishing(&expand_recursive(4, k).unwrap(), VanishingRule::MeanZero).len()
            })
            .collect();
        assert_eq!(counts, vec![2, 3, 4, 3, 2]);
    }

    #[test]
    fn suppression_examples() {
        let first = expand_direct(1, 1).unwrap();
        assert!(suppress_vanishing(&first, VanishingRule::MeanZero).is_empty());
        for k in 0..=3 {
            let terms = expand_recursive(3, k).unwrap();
            assert!(suppress_vanishing(&terms, VanishingRule::GaussianMeanZero).is_empty());
        }
    }

    #[test]
    fn direct_equals_recursive_up_to_five() {
        for n in 1..=5 {
            for k in 0..=n {
                let direct = expand_direct(n, k).unwrap();
                let recursive = expand_recursive(n, k).unwrap();
                assert_eq!(direct, recursive, "mismatch at (n={n}, k={k})");
            }
        }
    }

    #[test]
    fn coverage_of_every_term() {
        for n in 1..=5 {
            for k in 0..=n {
                for term in expand_recursive(n, k).unwrap() {
                    assert!(coverage_ok(&term, k, n - k));
                    assert!(term.blocks[0].dotted);
                    assert!(term.blocks[1..].iter().all(|b| !b.dotted));
                }
            }
        }
    }

    #[test]
    fn pin_counts() {
        let terms = expand_recursive(1, 1).unwrap();
        assert_eq!(pin_terms(&terms).len(), 1);
        assert_eq!(pin_terms(&terms)[0].pin, Pin::TauOne);

        let terms = expand_recursive(2, 1).unwrap();
        let pinned = pin_terms(&terms);
        // joint dotted gives 2, each of the two products gives 1
        assert_eq!(pinned.len(), 4);
        let joint: Vec<_> = pinned.iter().filter(|p| p.base.blocks.len() == 1).collect();
        assert_eq!(joint.len(), 2);
    }

    #[test]
    fn eval_pinned_first_order_thermal() {
        let bath = BathModel::single_mode_thermal(1.0, 1.0, 0.0);
        let terms = expand_recursive(1, 1).unwrap();
        let pinned = pin_terms(&terms);
        let v = eval_pinned(&pinned[0], &[0.0], &[], 1.5, &bath).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn eval_pinned_joint_dotted_reduces_to_two_point() {
        let bath = BathModel::single_mode_thermal(0.9, 1.4, 0.0);
        let terms = expand_recursive(2, 1).unwrap();
        let joint = terms.iter().find(|t| t.blocks.len() == 1).unwrap();
        let pinned = pin_terms(core::slice::from_ref(joint));
        let tau_pin = pinned.iter().find(|p| p.pin == Pin::TauOne).unwrap();
        let t = 2.0;
        let s = 0.7;
        // dD(tau1; s1) with tau1 = t: D([t],[s]) = <B_s B_t>
        let v = eval_pinned(tau_pin, &[0.0], &[s], t, &bath).unwrap();
        assert!((v - bath.two_point(s, t)).norm() < 1e-13);
        // ascending block killed by theta: s1 = 3.0 > t would require s > t
        let v = eval_pinned(tau_pin, &[0.0], &[3.0], t, &bath).unwrap();
        // single times per side: theta trivially passes; value is still the
        // two-point function (theta only orders within one side)
        assert!((v - bath.two_point(3.0, t)).norm() < 1e-13);
    }

    #[test]
    fn eval_ascending_block_vanishes() {
        let bath = BathModel::single_mode_thermal(0.9, 1.4, 0.0);
        // dD(tau1 tau2) evaluated at ascending taus
        let terms = expand_recursive(2, 2).unwrap();
        let joint = terms.iter().find(|t| t.blocks.len() == 1).unwrap();
        let v = eval_term_plain(joint, &[0.5, 1.5], &[], &bath).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn numerical_equivalence_direct_recursive() {
        let bath = BathModel::single_mode_thermal(0.8, 1.1, 0.5);
        let mut rng = StdRng::seed_from_u64(42);
        for n in 1..=4 {
            for k in 0..=n {
                let direct = expand_direct(n, k).unwrap();
                let recursive = expand_recursive(n, k).unwrap();
                for _ in 0..20 {
                    let taus: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..3.0)).collect();
                    let ss: Vec<f64> = (0..n - k).map(|_| rng.gen_range(0.0..3.0)).collect();
                    let vd: Complex64 = direct
                        .iter()
                        .map(|t| eval_term_plain(t, &taus, &ss, &bath).unwrap())
                        .sum();
                    let vr: Complex64 = recursive
                        .iter()
                        .map(|t| eval_term_plain(t, &taus, &ss, &bath).unwrap())
                        .sum();
                    assert!((vd - vr).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cumulant_conjugation_symmetry() {
        // evaluated cumulant at swapped arguments equals the conjugate
        let bath = BathModel::single_mode_thermal(0.8, 1.1, 0.5);
        let mut rng = StdRng::seed_from_u64(17);
        for n in 1..=4usize {
            for k in 0..=n {
                let fwd = expand_recursive(n, k).unwrap();
                let swp = expand_recursive(n, n - k).unwrap();
                for _ in 0..10 {
                    let taus: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..3.0)).collect();
                    let ss: Vec<f64> = (0..n - k).map(|_| rng.gen_range(0.0..3.0)).collect();
                    let vf: Complex64 =
                        fwd.iter().map(|t| eval_term_plain(t, &taus, &ss, &bath).unwrap()).sum();
                    let vs: Complex64 =
                        swp.iter().map(|t| eval_term_plain(t, &ss, &taus, &bath).unwrap()).sum();
                    assert!((vf.conj() - vs).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn render_second_order() {
        let terms = expand_recursive(2, 1).unwrap();
        let text = render_terms(&terms);
        assert!(text.contains("dD(τ1;s1)"));
        assert!(text.contains("dD(τ1)·D(s1)") || text.contains("D(s1)·dD(τ1)"));
        assert!(text.contains("dD(s1)·D(τ1)") || text.contains("dD(s1)"));
    }

    #[test]
    fn out_of_range_k_rejected() {
        assert!(matches!(expand_direct(2, 3), Err(Error::KOutOfRange { .. })));
        assert!(matches!(expand_recursive(2, 3), Err(Error::KOutOfRange { .. })));
    }
}
