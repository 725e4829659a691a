//! One step of the transform: distribution -> candidates -> weights ->
//! integer segments of the `2^width` code space.

use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::bitstream::{u64_to_bits, BitWindow, MAX_WINDOW_BITS};
use crate::providers::{rank_order, TokenDistribution, TokenId};

/// Top-k candidates in canonical order, renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    entries: Vec<(TokenId, f64)>,
}

impl CandidateSet {
    /// Builds a set directly from entries. They are sorted into canonical
    /// order and renormalized; non-positive entries are dropped.
    pub fn from_entries(mut entries: Vec<(TokenId, f64)>) -> Result<Self, CodecError> {
        entries.retain(|e| e.1 > 0.0);
        if entries.is_empty() {
            return Err(CodecError::EmptyDistribution);
        }
        entries.sort_by(rank_order);
        let mass: f64 = entries.iter().map(|e| e.1).sum();
        for e in &mut entries {
            e.1 /= mass;
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

/// Keeps the `top_k` most probable tokens, further truncated so each
/// candidate can own at least one of `space_size` code points.
pub fn build_candidates(
    dist: &TokenDistribution,
    top_k: usize,
    space_size: u64,
) -> Result<CandidateSet, CodecError> {
    let mut positive: Vec<(TokenId, f64)> = dist.entries().iter().copied().filter(|e| e.1 > 0.0).collect();
    if positive.is_empty() {
        return Err(CodecError::EmptyDistribution);
    }
    let keep = top_k.min(usize::try_from(space_size).unwrap_or(usize::MAX)).max(1);
    if positive.len() > keep {
        positive.select_nth_unstable_by(keep - 1, rank_order);
        positive.truncate(keep);
    }
    CandidateSet::from_entries(positive)
}

/// Per-candidate share of the code space, `P^lambda / sum(P^lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationVector {
    tokens: Vec<TokenId>,
    weights: Vec<f64>,
    lambda: f64,
}

impl AllocationVector {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

pub fn allocate(candidates: &CandidateSet, lambda: f64) -> Result<AllocationVector, CodecError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(CodecError::NegativeLambda(lambda));
    }
    // powf(0.0) is exactly 1, so lambda = 0 is uniform.
    let raised: Vec<f64> = candidates.entries.iter().map(|e| e.1.powf(lambda)).collect();
    let z: f64 = raised.iter().sum();
    if !z.is_finite() || z <= 0.0 {
        return Err(CodecError::InvalidParams(format!(
            "lambda {lambda} underflows the candidate weights"
        )));
    }
    Ok(AllocationVector {
        tokens: candidates.tokens().collect(),
        weights: raised.iter().map(|w| w / z).collect(),
        lambda,
    })
}

/// Population variance of the weight vector.
pub fn allocation_variance(a: &AllocationVector) -> f64 {
    variance(&a.weights)
}

pub(crate) fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Integer sizes summing to `total`, one unit minimum per weight.
///
/// Sizes start at `floor(w * total)`. Zero sizes are lifted to one. Units
/// still missing go to the largest fractional remainders (ties: lower
/// index); lifted entries take part only once every other entry has had
/// a unit. Units in excess are taken one at a time from the largest size
/// (ties: smaller remainder, then higher index).
pub fn apportion(weights: &[f64], total: u64) -> Result<Vec<u64>, CodecError> {
    let n = weights.len();
    if n == 0 {
        return Err(CodecError::EmptyDistribution);
    }
    if (n as u64) > total {
        return Err(CodecError::SpaceTooSmall {
            candidates: n,
            space: total,
        });
    }
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut sizes: Vec<u64> = raw.iter().map(|r| (r.floor().max(0.0) as u64).min(total)).collect();
    let remainders: Vec<f64> = raw.iter().zip(&sizes).map(|(r, &s)| r - s as f64).collect();
    let mut lifted = vec![false; n];
    for (size, flag) in sizes.iter_mut().zip(&mut lifted) {
        if *size == 0 {
            *size = 1;
            *flag = true;
        }
    }

    let assigned: u64 = sizes.iter().sum();
    if assigned < total {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            lifted[a]
                .cmp(&lifted[b])
                .then(remainders[b].total_cmp(&remainders[a]))
                .then(a.cmp(&b))
        });
        let missing = total - assigned;
        let rounds = missing / n as u64;
        let extra = (missing % n as u64) as usize;
        for (rank, &i) in order.iter().enumerate() {
            sizes[i] += rounds + u64::from(rank < extra);
        }
    } else {
        for _ in 0..assigned - total {
            let donor = (0..n)
                .filter(|&i| sizes[i] > 1)
                .max_by(|&a, &b| {
                    sizes[a]
                        .cmp(&sizes[b])
                        .then(remainders[b].total_cmp(&remainders[a]))
                        .then(a.cmp(&b))
                })
                .expect("n <= total leaves a donor");
            sizes[donor] -= 1;
        }
    }
    debug_assert_eq!(sizes.iter().sum::<u64>(), total);
    Ok(sizes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub token: TokenId,
    pub begin: u64,
    pub end: u64,
}

/// Contiguous, disjoint segments covering `[0, 2^width - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTable {
    width: u32,
    segments: Vec<Segment>,
}

impl SegmentTable {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segment whose range holds `window.value`, with the committed prefix.
    pub fn select(&self, window: &BitWindow) -> Result<Selection, CodecError> {
        if window.width != self.width {
            return Err(CodecError::InvalidParams(format!(
                "window width {} does not match table width {}",
                window.width, self.width
            )));
        }
        let idx = self.segments.partition_point(|s| s.end < window.value);
        let segment = *self
            .segments
            .get(idx)
            .filter(|s| s.begin <= window.value)
            .expect("segments cover the code space");
        Ok(Selection::new(segment, self.width))
    }

    /// The segment owned by `token`.
    pub fn locate(&self, token: TokenId) -> Option<Segment> {
        self.segments.iter().find(|s| s.token == token).copied()
    }
}

/// Lays out segments from code point 0 in candidate order.
pub fn partition(a: &AllocationVector, width: u32) -> Result<SegmentTable, CodecError> {
    check_width(width)?;
    let sizes = apportion(&a.weights, 1u64 << width)?;
    let mut begin = 0u64;
    let segments = a
        .tokens
        .iter()
        .zip(sizes)
        .map(|(&token, size)| {
            let s = Segment {
                token,
                begin,
                end: begin + size - 1,
            };
            begin += size;
            s
        })
        .collect();
    Ok(SegmentTable { width, segments })
}

pub(crate) fn check_width(width: u32) -> Result<(), CodecError> {
    if width == 0 || width > MAX_WINDOW_BITS {
        return Err(CodecError::InvalidParams(format!(
            "window width must be 1..={MAX_WINDOW_BITS}, got {width}"
        )));
    }
    Ok(())
}

/// Length of the common prefix of `begin` and `end` as `width`-bit strings.
pub fn common_prefix_len(begin: u64, end: u64, width: u32) -> u32 {
    let diff = begin ^ end;
    let diff_bits = u64::BITS - diff.leading_zeros();
    width - diff_bits.min(width)
}

/// A chosen segment and the bits it commits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub segment: Segment,
    pub width: u32,
    pub embedded: Vec<bool>,
}

impl Selection {
    pub fn new(segment: Segment, width: u32) -> Self {
        let p = common_prefix_len(segment.begin, segment.end, width);
        Self {
            segment,
            width,
            embedded: u64_to_bits(segment.begin, width, p),
        }
    }

    pub fn prefix_len(&self) -> usize {
        self.embedded.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::{bits_to_literal, MessageBits};
    use proptest::prelude::*;

    fn dist(probs: &[f64]) -> TokenDistribution {
        TokenDistribution::from_dense(&[], probs).unwrap()
    }

    fn weights_of(c: &CandidateSet) -> Vec<f64> {
        c.entries().iter().map(|e| e.1).collect()
    }

    fn table(probs: &[f64], lambda: f64, width: u32) -> SegmentTable {
        let c = build_candidates(&dist(probs), 40, 1 << width).unwrap();
        partition(&allocate(&c, lambda).unwrap(), width).unwrap()
    }

    #[test]
    fn candidates_keep_order_and_truncate_to_space() {
        let d = dist(&[0.5, 0.25, 0.125, 0.125]);
        let c = build_candidates(&d, 40, 8).unwrap();
        assert_eq!(c.tokens().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(weights_of(&c), vec![0.5, 0.25, 0.125, 0.125]);

        let c = build_candidates(&d, 40, 2).unwrap();
        assert_eq!(c.tokens().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1]);
        let w = weights_of(&c);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);

        let c = build_candidates(&dist(&[0.1, 0.4, 0.0, 0.5]), 2, 1 << 16).unwrap();
        assert_eq!(c.tokens().map(|t| t.0).collect::<Vec<_>>(), vec![3, 1]);
    }

    #[test]
    fn all_zero_distribution_is_empty() {
        let d = TokenDistribution::new(&[], vec![(TokenId(0), 1.0), (TokenId(1), 0.0)]).unwrap();
        assert!(build_candidates(&d, 40, 8).is_ok());
        assert!(matches!(
            CandidateSet::from_entries(vec![(TokenId(0), 0.0), (TokenId(1), 0.0)]),
            Err(CodecError::EmptyDistribution)
        ));
    }

    #[test]
    fn allocation_examples() {
        let c = CandidateSet::from_entries(vec![(TokenId(0), 0.5), (TokenId(1), 0.3), (TokenId(2), 0.2)]).unwrap();
        let a = allocate(&c, 1.0).unwrap();
        for (w, e) in a.weights().iter().zip([0.5, 0.3, 0.2]) {
            assert!((w - e).abs() < 1e-12);
        }

        let c4 = build_candidates(&dist(&[0.7, 0.1, 0.15, 0.05]), 40, 16).unwrap();
        assert_eq!(allocate(&c4, 0.0).unwrap().weights(), &[0.25; 4]);

        let c2 = CandidateSet::from_entries(vec![(TokenId(0), 0.8), (TokenId(1), 0.2)]).unwrap();
        let a = allocate(&c2, 2.0).unwrap();
        assert!((a.weights()[0] - 0.64 / 0.68).abs() < 1e-12);
        assert!((a.weights()[1] - 0.04 / 0.68).abs() < 1e-12);
        assert!((a.weights()[0] - 0.9412).abs() < 5e-5);

        assert!(matches!(allocate(&c2, -0.5), Err(CodecError::NegativeLambda(_))));
    }

    #[test]
    fn variance_examples() {
        let c = CandidateSet::from_entries(vec![(TokenId(0), 0.75), (TokenId(1), 0.25)]).unwrap();
        assert!((allocation_variance(&allocate(&c, 1.0).unwrap()) - 0.0625).abs() < 1e-15);
        assert_eq!(allocation_variance(&allocate(&c, 0.0).unwrap()), 0.0);
        let one = CandidateSet::from_entries(vec![(TokenId(4), 1.0)]).unwrap();
        assert_eq!(allocation_variance(&allocate(&one, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn partition_examples() {
        let t = table(&[0.5, 0.25, 0.125, 0.125], 1.0, 3);
        let ranges: Vec<(u64, u64)> = t.segments().iter().map(|s| (s.begin, s.end)).collect();
        assert_eq!(ranges, vec![(0b000, 0b011), (0b100, 0b101), (0b110, 0b110), (0b111, 0b111)]);

        let t = table(&[0.25; 4], 1.0, 2);
        let ranges: Vec<(u64, u64)> = t.segments().iter().map(|s| (s.begin, s.end)).collect();
        assert_eq!(ranges, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);

        let t = table(&[1.0], 1.0, 5);
        assert_eq!(t.segments(), &[Segment { token: TokenId(0), begin: 0, end: 31 }]);
    }

    #[test]
    fn partition_rejects_oversized_candidate_sets() {
        let c = build_candidates(&dist(&[0.25; 4]), 40, 1 << 10).unwrap();
        let a = allocate(&c, 1.0).unwrap();
        assert!(matches!(partition(&a, 1), Err(CodecError::SpaceTooSmall { candidates: 4, space: 2 })));
        assert!(matches!(partition(&a, 0), Err(CodecError::InvalidParams(_))));
    }

    #[test]
    fn apportion_lifts_and_trims() {
        // Tiny weights are lifted to one unit and the excess comes off the top.
        assert_eq!(apportion(&[0.97, 0.01, 0.01, 0.01], 8).unwrap(), vec![5, 1, 1, 1]);
        // Leftover units follow the largest remainders, lower index first.
        assert_eq!(apportion(&[1.0 / 3.0; 3], 4).unwrap(), vec![2, 1, 1]);
        assert_eq!(apportion(&[0.45, 0.35, 0.2], 8).unwrap(), vec![4, 3, 1]);
    }

    #[test]
    fn prefix_match_examples() {
        let seg = |b, e| Segment { token: TokenId(0), begin: b, end: e };
        let s = Selection::new(seg(0b10000, 0b10011), 5);
        assert_eq!(bits_to_literal(&s.embedded), "100");
        let s = Selection::new(seg(0b110, 0b110), 3);
        assert_eq!((bits_to_literal(&s.embedded), s.prefix_len()), ("110".into(), 3));
        let s = Selection::new(seg(0, 31), 5);
        assert_eq!(s.prefix_len(), 0);
    }

    #[test]
    fn select_and_locate() {
        let t = table(&[0.5, 0.25, 0.125, 0.125], 1.0, 3);
        let m = MessageBits::from_literal("101").unwrap();
        let sel = t.select(&m.read_window(3).unwrap()).unwrap();
        assert_eq!(sel.segment.token, TokenId(1));
        assert_eq!(bits_to_literal(&sel.embedded), "10");
        assert_eq!(t.locate(TokenId(1)).map(|s| (s.begin, s.end)), Some((0b100, 0b101)));
        assert_eq!(t.locate(TokenId(9)), None);
        let single = table(&[1.0], 1.0, 4);
        assert_eq!(single.locate(TokenId(0)).map(|s| (s.begin, s.end)), Some((0, 15)));
    }

    proptest! {
        #[test]
        fn partition_covers_space(raw in proptest::collection::vec(0.0f64..1.0, 1..60),
                                  lambda in 0.0f64..3.0, width in 1u32..24) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let sum: f64 = probs.iter().sum();
            prop_assume!((sum - 1.0).abs() < 1e-9);
            let d = TokenDistribution::from_dense(&[], &probs).unwrap();
            let c = build_candidates(&d, 40, 1 << width).unwrap();
            let t = partition(&allocate(&c, lambda).unwrap(), width).unwrap();
            let segs = t.segments();
            prop_assert_eq!(segs[0].begin, 0);
            prop_assert_eq!(segs.last().unwrap().end, (1u64 << width) - 1);
            for pair in segs.windows(2) {
                prop_assert_eq!(pair[0].end + 1, pair[1].begin);
            }
            for s in segs {
                prop_assert!(s.begin <= s.end);
            }
            prop_assert_eq!(t, partition(&allocate(&c, lambda).unwrap(), width).unwrap());
        }

        #[test]
        fn committed_prefix_matches_window(begin in 0u64..1024, len in 1u64..1024, offset in 0u64..1024) {
            let width = 11;
            let end = (begin + len - 1).min((1 << width) - 1);
            let value = begin + offset % (end - begin + 1);
            let sel = Selection::new(Segment { token: TokenId(0), begin, end }, width);
            let p = sel.prefix_len() as u32;
            if p > 0 {
                prop_assert_eq!(value >> (width - p), begin >> (width - p));
                prop_assert_eq!(end >> (width - p), begin >> (width - p));
            }
            prop_assert!(p == width || (begin >> (width - p - 1)) != (end >> (width - p - 1)));
        }
    }
}
