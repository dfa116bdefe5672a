//! Pairwise human-evaluation votes with justification tags: win rates,
//! agreement classes and Fleiss' kappa.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raters per item.
pub const RATERS: usize = 5;

/// Default item count for the simulated agreement curve.
pub const SIMULATED_ITEMS: usize = 304;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn other(self) -> Self {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::A => "A",
            Choice::B => "B",
        })
    }
}

impl FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Choice::A),
            "B" | "b" => Ok(Choice::B),
            other => Err(Error::InvalidVotes(format!("choice must be A or B, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonTag {
    PixelSharpness,
    MotionSmoothness,
    ObjectConsistency,
    VisualConcept,
    AmountOfMotion,
    SpatialAlignment,
    TemporalAlignment,
}

impl ReasonTag {
    pub const ALL: [ReasonTag; 7] = [
        ReasonTag::PixelSharpness,
        ReasonTag::MotionSmoothness,
        ReasonTag::ObjectConsistency,
        ReasonTag::VisualConcept,
        ReasonTag::AmountOfMotion,
        ReasonTag::SpatialAlignment,
        ReasonTag::TemporalAlignment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReasonTag::PixelSharpness => "pixel_sharpness",
            ReasonTag::MotionSmoothness => "motion_smoothness",
            ReasonTag::ObjectConsistency => "object_consistency",
            ReasonTag::VisualConcept => "visual_concept",
            ReasonTag::AmountOfMotion => "amount_of_motion",
            ReasonTag::SpatialAlignment => "spatial_alignment",
            ReasonTag::TemporalAlignment => "temporal_alignment",
        }
    }

    /// Quality reasons; the remaining two concern faithfulness to the prompt.
    pub fn is_quality(self) -> bool {
        !matches!(self, ReasonTag::SpatialAlignment | ReasonTag::TemporalAlignment)
    }
}

impl fmt::Display for ReasonTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReasonTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ReasonTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidVotes(format!("unknown reason tag {s:?}")))
    }
}

/// One evaluated item: five binary votes, each with a non-empty set of reasons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct VoteRecord {
    item_id: String,
    votes: [Choice; RATERS],
    reasons: [Vec<ReasonTag>; RATERS],
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    item_id: String,
    votes: Vec<Choice>,
    reasons: Vec<Vec<ReasonTag>>,
}

impl TryFrom<RawRecord> for VoteRecord {
    type Error = Error;

    fn try_from(r: RawRecord) -> Result<Self> {
        VoteRecord::new(r.item_id, r.votes, r.reasons)
    }
}

impl From<VoteRecord> for RawRecord {
    fn from(r: VoteRecord) -> Self {
        RawRecord { item_id: r.item_id, votes: r.votes.to_vec(), reasons: r.reasons.to_vec() }
    }
}

impl VoteRecord {
    pub fn new(item_id: impl Into<String>, votes: Vec<Choice>, reasons: Vec<Vec<ReasonTag>>) -> Result<Self> {
        let item_id = item_id.into();
        let votes: [Choice; RATERS] = votes.try_into().map_err(|v: Vec<Choice>| {
            Error::InvalidVotes(format!("item {item_id:?}: expected {RATERS} votes, got {}", v.len()))
        })?;
        let reasons: [Vec<ReasonTag>; RATERS] = reasons.try_into().map_err(|r: Vec<Vec<ReasonTag>>| {
            Error::InvalidVotes(format!("item {item_id:?}: expected {RATERS} reason lists, got {}", r.len()))
        })?;
        if let Some(i) = reasons.iter().position(|r| r.is_empty()) {
            return Err(Error::InvalidVotes(format!("item {item_id:?}: rater {i} gave no reason")));
        }
        Ok(Self { item_id, votes, reasons })
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn votes(&self) -> &[Choice; RATERS] {
        &self.votes
    }

    pub fn reasons(&self) -> &[Vec<ReasonTag>; RATERS] {
        &self.reasons
    }

    pub fn count(&self, c: Choice) -> usize {
        self.votes.iter().filter(|&&v| v == c).count()
    }

    /// The same record with A and B exchanged in every vote.
    pub fn swapped(&self) -> Self {
        Self { item_id: self.item_id.clone(), votes: self.votes.map(Choice::other), reasons: self.reasons.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgreementClass {
    /// 3|2
    Split,
    /// 4|1
    Partial,
    /// 5|0
    Complete,
}

impl AgreementClass {
    /// Votes for the majority side.
    pub fn majority_votes(self) -> usize {
        match self {
            AgreementClass::Split => 3,
            AgreementClass::Partial => 4,
            AgreementClass::Complete => 5,
        }
    }
}

impl FromStr for AgreementClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "split" => Ok(AgreementClass::Split),
            "partial" => Ok(AgreementClass::Partial),
            "complete" => Ok(AgreementClass::Complete),
            other => Err(Error::InvalidVotes(format!("unknown agreement class {other:?}"))),
        }
    }
}

pub fn majority_winner(rec: &VoteRecord) -> Choice {
    if rec.count(Choice::A) * 2 > RATERS {
        Choice::A
    } else {
        Choice::B
    }
}

pub fn classify_agreement(rec: &VoteRecord) -> AgreementClass {
    match rec.count(Choice::A).max(rec.count(Choice::B)) {
        5 => AgreementClass::Complete,
        4 => AgreementClass::Partial,
        _ => AgreementClass::Split,
    }
}

/// Fraction of items whose majority winner is `side`.
pub fn win_rate(records: &[VoteRecord], side: Choice) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidVotes("no records".into()));
    }
    let wins = records.iter().filter(|r| majority_winner(r) == side).count();
    Ok(wins as f64 / records.len() as f64)
}

/// Result of Fleiss' kappa; undefined when every vote falls in one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "kappa", rename_all = "lowercase")]
pub enum Kappa {
    Value(f64),
    Degenerate,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(k) => Some(k),
            Kappa::Degenerate => None,
        }
    }
}

/// Fleiss' kappa over per-item category counts; every row must sum to the same
/// number of raters `n ≥ 2`.
pub fn fleiss_kappa_counts<const K: usize>(counts: &[[usize; K]]) -> Result<Kappa> {
    let first = counts.first().ok_or_else(|| Error::InvalidVotes("no items".into()))?;
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(Error::InvalidVotes("need at least two ratings per item".into()));
    }
    if let Some(i) = counts.iter().position(|row| row.iter().sum::<usize>() != n) {
        return Err(Error::InvalidVotes(format!("item {i} does not have {n} ratings")));
    }
    let items = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|row| row.iter().map(|&c| (c * c.saturating_sub(1)) as f64).sum::<f64>() / (nf * (nf - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..K)
        .map(|j| {
            let p = counts.iter().map(|row| row[j]).sum::<usize>() as f64 / (items * nf);
            p * p
        })
        .sum();
    if (0..K).filter(|&j| counts.iter().any(|row| row[j] > 0)).count() < 2 {
        return Ok(Kappa::Degenerate);
    }
    Ok(Kappa::Value((p_bar - p_e) / (1.0 - p_e)))
}

pub fn fleiss_kappa(records: &[VoteRecord]) -> Result<Kappa> {
    let counts: Vec<[usize; 2]> = records.iter().map(|r| [r.count(Choice::A), r.count(Choice::B)]).collect();
    fleiss_kappa_counts(&counts)
}

/// Vote counts `[A, B]` for an item of class `class` won by `winner`.
pub fn class_counts(class: AgreementClass, winner: Choice) -> [usize; 2] {
    let m = class.majority_votes();
    match winner {
        Choice::A => [m, RATERS - m],
        Choice::B => [RATERS - m, m],
    }
}

/// κ as a function of the fraction of COMPLETE items, the rest being
/// `replacement`. Item `i` is won by A when `i` is even, B otherwise, so the
/// pooled proportions are balanced whenever both class sizes are even.
pub fn simulate_kappa_curve(
    num_items: usize,
    replacement: AgreementClass,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if num_items == 0 {
        return Err(Error::InvalidVotes("need at least one item".into()));
    }
    if replacement == AgreementClass::Complete {
        return Err(Error::InvalidVotes("replacement class must be SPLIT or PARTIAL".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidVotes("fractions must be sorted and lie in [0, 1]".into()));
    }
    fractions
        .iter()
        .map(|&f| {
            let complete = (f * num_items as f64).round() as usize;
            let counts: Vec<[usize; 2]> = (0..num_items)
                .map(|i| {
                    let class = if i < complete { AgreementClass::Complete } else { replacement };
                    class_counts(class, if i % 2 == 0 { Choice::A } else { Choice::B })
                })
                .collect();
            match fleiss_kappa_counts(&counts)? {
                Kappa::Value(k) => Ok((f, k)),
                Kappa::Degenerate => Err(Error::InvalidVotes("simulated votes are degenerate".into())),
            }
        })
        .collect()
}

/// For items won by `winner_filter`, the percentage of items in which each tag
/// was cited by at least one rater on the winning side. Tags never cited are absent.
pub fn reason_distribution(records: &[VoteRecord], winner_filter: Choice) -> BTreeMap<ReasonTag, f64> {
    let selected: Vec<&VoteRecord> = records.iter().filter(|r| majority_winner(r) == winner_filter).collect();
    let mut hits: BTreeMap<ReasonTag, usize> = BTreeMap::new();
    for rec in &selected {
        let mut seen = [false; 7];
        for (vote, reasons) in rec.votes.iter().zip(&rec.reasons) {
            if *vote == winner_filter {
                for &tag in reasons {
                    seen[tag as usize] = true;
                }
            }
        }
        for tag in ReasonTag::ALL.into_iter().filter(|&t| seen[t as usize]) {
            *hits.entry(tag).or_default() += 1;
        }
    }
    let total = selected.len() as f64;
    hits.into_iter().map(|(tag, c)| (tag, 100.0 * c as f64 / total)).collect()
}

/// Reads a vote CSV with header `item_id,rater,choice,reasons`. Reasons are
/// `;`-separated tags. Items keep the order of their first appearance.
pub fn read_votes_csv<R: Read>(input: R) -> Result<Vec<VoteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().map(str::trim).ne(["item_id", "rater", "choice", "reasons"]) {
        return Err(Error::VoteFile { line: 1, msg: "header must be item_id,rater,choice,reasons".into() });
    }

    struct Pending {
        line: u64,
        raters: Vec<String>,
        votes: Vec<Choice>,
        reasons: Vec<Vec<ReasonTag>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut items: HashMap<String, Pending> = HashMap::new();

    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::VoteFile { line, msg };
        if row.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", row.len())));
        }
        let item_id = row[0].trim().to_string();
        let rater = row[1].trim().to_string();
        if item_id.is_empty() || rater.is_empty() {
            return Err(err("item_id and rater must be non-empty".into()));
        }
        let choice: Choice = row[2].parse().map_err(|e: Error| err(e.to_string()))?;
        let reasons = row[3]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<ReasonTag>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| err(e.to_string()))?;
        if reasons.is_empty() {
            return Err(err("every vote needs at least one reason".into()));
        }
        let entry = items.entry(item_id.clone()).or_insert_with(|| {
            order.push(item_id.clone());
            Pending { line, raters: Vec::new(), votes: Vec::new(), reasons: Vec::new() }
        });
        if entry.raters.contains(&rater) {
            return Err(err(format!("rater {rater:?} voted twice on item {item_id:?}")));
        }
        entry.raters.push(rater);
        entry.votes.push(choice);
        entry.reasons.push(reasons);
    }

    order
        .into_iter()
        .map(|id| {
            let p = items.remove(&id).expect("every ordered id has an entry");
            let line = p.line;
            VoteRecord::new(id, p.votes, p.reasons).map_err(|e| Error::VoteFile { line, msg: e.to_string() })
        })
        .collect()
}

pub fn load_votes(path: impl AsRef<Path>) -> Result<Vec<VoteRecord>> {
    read_votes_csv(std::fs::File::open(path)?)
}

/// Writes records in the format accepted by [`read_votes_csv`]; raters are named `r1`..`r5`.
pub fn write_votes_csv<W: Write>(records: &[VoteRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "rater", "choice", "reasons"])?;
    for rec in records {
        for (i, (vote, reasons)) in rec.votes.iter().zip(&rec.reasons).enumerate() {
            let tags: Vec<&str> = reasons.iter().map(|t| t.name()).collect();
            w.write_record([rec.item_id.as_str(), &format!("r{}", i + 1), &vote.to_string(), &tags.join(";")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary of a vote file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoteSummary {
    pub items: usize,
    pub win_rate_a: f64,
    pub win_rate_b: f64,
    pub split: usize,
    pub partial: usize,
    pub complete: usize,
    pub kappa: Kappa,
    pub reasons_a: BTreeMap<ReasonTag, f64>,
    pub reasons_b: BTreeMap<ReasonTag, f64>,
}

pub fn summarize(records: &[VoteRecord]) -> Result<VoteSummary> {
    let classes: Vec<AgreementClass> = records.iter().map(classify_agreement).collect();
    let count = |c: AgreementClass| classes.iter().filter(|&&x| x == c).count();
    Ok(VoteSummary {
        items: records.len(),
        win_rate_a: win_rate(records, Choice::A)?,
        win_rate_b: win_rate(records, Choice::B)?,
        split: count(AgreementClass::Split),
        partial: count(AgreementClass::Partial),
        complete: count(AgreementClass::Complete),
        kappa: fleiss_kappa(records)?,
        reasons_a: reason_distribution(records, Choice::A),
        reasons_b: reason_distribution(records, Choice::B),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, votes: &str) -> VoteRecord {
        let votes: Vec<Choice> = votes.chars().map(|c| c.to_string().parse().unwrap()).collect();
        VoteRecord::new(id, votes, vec![vec![ReasonTag::PixelSharpness]; RATERS]).unwrap()
    }

    #[test]
    fn winners_and_classes() {
        assert_eq!(majority_winner(&rec("x", "AAABB")), Choice::A);
        assert_eq!(majority_winner(&rec("x", "BBBBB")), Choice::B);
        assert_eq!(classify_agreement(&rec("x", "AAABB")), AgreementClass::Split);
        assert_eq!(classify_agreement(&rec("x", "AAAAB")), AgreementClass::Partial);
        assert_eq!(classify_agreement(&rec("x", "AAAAA")), AgreementClass::Complete);
        assert_eq!(classify_agreement(&rec("x", "BABBA")), AgreementClass::Split);
    }

    #[test]
    fn record_validation() {
        assert!(VoteRecord::new("x", vec![Choice::A; 4], vec![vec![ReasonTag::VisualConcept]; 4]).is_err());
        let mut reasons = vec![vec![ReasonTag::VisualConcept]; 5];
        reasons[2].clear();
        assert!(VoteRecord::new("x", vec![Choice::A; 5], reasons).is_err());
    }

    #[test]
    fn kappa_reference_points() {
        let complete: Vec<[usize; 2]> = (0..304).map(|i| if i % 2 == 0 { [5, 0] } else { [0, 5] }).collect();
        assert_eq!(fleiss_kappa_counts(&complete).unwrap(), Kappa::Value(1.0));
        let split: Vec<[usize; 2]> = (0..304).map(|i| if i % 2 == 0 { [3, 2] } else { [2, 3] }).collect();
        assert!((fleiss_kappa_counts(&split).unwrap().value().unwrap() + 0.2).abs() < 1e-12);
        let partial: Vec<[usize; 2]> = (0..304).map(|i| if i % 2 == 0 { [4, 1] } else { [1, 4] }).collect();
        assert!((fleiss_kappa_counts(&partial).unwrap().value().unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(fleiss_kappa_counts(&[[5, 0], [5, 0]]).unwrap(), Kappa::Degenerate);
        assert!(fleiss_kappa_counts::<2>(&[]).is_err());
        assert!(fleiss_kappa_counts(&[[5, 0], [3, 1]]).is_err());
    }

    #[test]
    fn curve_reference_points() {
        let split = simulate_kappa_curve(SIMULATED_ITEMS, AgreementClass::Split, &[0.0, 0.5, 1.0]).unwrap();
        let partial = simulate_kappa_curve(SIMULATED_ITEMS, AgreementClass::Partial, &[0.0, 0.5, 1.0]).unwrap();
        for (got, want) in split.iter().zip([-0.2, 0.4, 1.0]).chain(partial.iter().zip([0.2, 0.6, 1.0])) {
            assert!((got.1 - want).abs() < 1e-12, "{got:?} vs {want}");
        }
        assert!(simulate_kappa_curve(10, AgreementClass::Complete, &[0.5]).is_err());
        assert!(simulate_kappa_curve(10, AgreementClass::Split, &[0.6, 0.5]).is_err());
    }

    #[test]
    fn reasons_per_item() {
        let r = VoteRecord::new(
            "x",
            vec![Choice::A, Choice::A, Choice::A, Choice::B, Choice::B],
            vec![
                vec![ReasonTag::PixelSharpness],
                vec![ReasonTag::PixelSharpness, ReasonTag::AmountOfMotion],
                vec![ReasonTag::PixelSharpness],
                vec![ReasonTag::TemporalAlignment],
                vec![ReasonTag::TemporalAlignment],
            ],
        )
        .unwrap();
        let d = reason_distribution(std::slice::from_ref(&r), Choice::A);
        assert_eq!(d.len(), 2);
        assert_eq!(d[&ReasonTag::PixelSharpness], 100.0);
        assert_eq!(d[&ReasonTag::AmountOfMotion], 100.0);
        assert!(reason_distribution(&[r], Choice::B).is_empty());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let recs = vec![rec("p1", "AAABB"), rec("p2", "BBBBA")];
        let mut buf = Vec::new();
        write_votes_csv(&recs, &mut buf).unwrap();
        assert_eq!(read_votes_csv(&buf[..]).unwrap(), recs);

        let bad_tag = "item_id,rater,choice,reasons\np1,r1,A,sharpness\n";
        match read_votes_csv(bad_tag.as_bytes()) {
            Err(Error::VoteFile { line: 2, msg }) => assert!(msg.contains("unknown reason tag")),
            other => panic!("{other:?}"),
        }
        let short = "item_id,rater,choice,reasons\np1,r1,A,visual_concept\n";
        assert!(matches!(read_votes_csv(short.as_bytes()), Err(Error::VoteFile { line: 2, .. })));
        let dup = "item_id,rater,choice,reasons\np1,r1,A,visual_concept\np1,r1,B,visual_concept\n";
        assert!(matches!(read_votes_csv(dup.as_bytes()), Err(Error::VoteFile { line: 3, .. })));
        assert!(read_votes_csv("id,rater,choice,reasons\n".as_bytes()).is_err());
    }

    fn arb_record() -> impl Strategy<Value = VoteRecord> {
        (proptest::collection::vec(any::<bool>(), RATERS), proptest::collection::vec(0usize..7, RATERS)).prop_map(
            |(v, tags)| {
                let votes = v.into_iter().map(|a| if a { Choice::A } else { Choice::B }).collect();
                let reasons = tags.into_iter().map(|t| vec![ReasonTag::ALL[t]]).collect();
                VoteRecord::new("p", votes, reasons).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn label_symmetry(recs in proptest::collection::vec(arb_record(), 1..40)) {
            let swapped: Vec<VoteRecord> = recs.iter().map(VoteRecord::swapped).collect();
            for (a, b) in recs.iter().zip(&swapped) {
                prop_assert_eq!(majority_winner(a), majority_winner(b).other());
                prop_assert_eq!(classify_agreement(a), classify_agreement(b));
            }
            match (fleiss_kappa(&recs).unwrap(), fleiss_kappa(&swapped).unwrap()) {
                (Kappa::Value(x), Kappa::Value(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn curve_bounds_and_monotone(half in 1usize..200, mut fr in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            fr.sort_by(f64::total_cmp);
            let items = 2 * half;
            for (class, lo) in [(AgreementClass::Split, -0.2), (AgreementClass::Partial, 0.2)] {
                let curve = simulate_kappa_curve(items, class, &fr).unwrap();
                for w in curve.windows(2) {
                    prop_assert!(w[1].1 >= w[0].1 - 1e-12);
                }
                for &(_, k) in &curve {
                    prop_assert!(k >= lo - 1e-12 && k <= 1.0 + 1e-12, "{k}");
                }
            }
        }
    }
}
