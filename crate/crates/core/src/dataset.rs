//! Raw dataset ingestion, cleaning, and train/val/test splitting.
//!
//! The input is a UTF-8 CSV with header `ENFOODNAME,BASETERM_NAME,FACETS`:
//! a free-text food description, the base term's display name, and the full
//! target code. Cleaning drops what cannot be used and keeps an audit trail;
//! nothing is repaired silently.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use regex::Regex;
use thiserror::Error;

use crate::codec::{parse_code_with, validate_code, CodecOptions, FoodCode};
use crate::mining::{mine_hard_negatives, HardNegativeSet, MiningConfig, MiningError};
use crate::rng::{seeded_rng, shuffle};
use crate::taxonomy::{Taxonomy, TermCode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub description: String,
    pub base_term_name: String,
    pub facets_code: String,
}

/// A cleaned sample: the description text and its gold code, which parses
/// strictly and references only catalog terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub description: String,
    pub gold: FoodCode,
}

/// Counts of every record dropped during preprocessing, by reason. The
/// reasons are checked in this order and each record is counted once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditLog {
    pub input: usize,
    pub missing: usize,
    pub anonymized: usize,
    pub unparseable: usize,
    pub invalid_reference: usize,
    pub duplicates: usize,
    pub output: usize,
}

impl AuditLog {
    /// Every input record is either dropped for exactly one reason or kept.
    pub fn balanced(&self) -> bool {
        self.input
            == self.output
                + self.missing
                + self.anonymized
                + self.unparseable
                + self.invalid_reference
                + self.duplicates
    }

    pub fn render(&self) -> String {
        format!(
            "input              {}\n\
             missing            {}\n\
             anonymized         {}\n\
             unparseable        {}\n\
             invalid_reference  {}\n\
             duplicates         {}\n\
             output             {}\n",
            self.input,
            self.missing,
            self.anonymized,
            self.unparseable,
            self.invalid_reference,
            self.duplicates,
            self.output
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Stratified,
    Oos,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
    pub test_target_size: usize,
    /// Ignored in OOS mode, which produces no validation set.
    pub val_target_size: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("csv header must be ENFOODNAME,BASETERM_NAME,FACETS, found {0:?}")]
    BadHeader(String),
    #[error("samples file: {0}")]
    BadSampleRow(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("split target {requested} does not leave a training set in a corpus of {available}")]
    TargetTooLarge { requested: usize, available: usize },
}

const RAW_HEADER: [&str; 3] = ["ENFOODNAME", "BASETERM_NAME", "FACETS"];

pub fn read_raw_csv(reader: impl Read) -> Result<Vec<RawRecord>, DatasetError> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RAW_HEADER {
        return Err(DatasetError::BadHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut records = Vec::new();
    for row in csv.records() {
        let row = row?;
        records.push(RawRecord {
            description: row.get(0).unwrap_or("").to_owned(),
            base_term_name: row.get(1).unwrap_or("").to_owned(),
            facets_code: row.get(2).unwrap_or("").to_owned(),
        });
    }
    Ok(records)
}

pub fn write_raw_csv(records: &[RawRecord], writer: impl Write) -> Result<(), DatasetError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(RAW_HEADER)?;
    for r in records {
        csv.write_record([&r.description, &r.base_term_name, &r.facets_code])?;
    }
    csv.flush()?;
    Ok(())
}

/// Samples travel as two-column CSVs once the base term name is folded into
/// the code itself.
pub fn write_samples_csv(samples: &[Sample], writer: impl Write) -> Result<(), DatasetError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["ENFOODNAME", "FACETS"])?;
    for s in samples {
        csv.write_record([&s.description, &s.gold.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_samples_csv(reader: impl Read) -> Result<Vec<Sample>, DatasetError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["ENFOODNAME", "FACETS"] {
        return Err(DatasetError::BadHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut samples = Vec::new();
    for row in csv.records() {
        let row = row?;
        let code = row.get(1).unwrap_or("").parse().map_err(|e| {
            DatasetError::BadSampleRow(format!("unparseable FACETS: {e}"))
        })?;
        samples.push(Sample {
            description: row.get(0).unwrap_or("").to_owned(),
            gold: code,
        });
    }
    Ok(samples)
}

/// Descriptions that are placeholder-redacted rather than real text, e.g.
/// "milk [BRAND] 1l". Configurable because redaction markers vary by source.
pub fn default_anonymized_pattern() -> Regex {
    Regex::new(r"\[[A-Z][A-Z0-9_ ]*\]").expect("pattern is valid")
}

fn normalized_description(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Cleans raw records into samples. Drop reasons, applied in order:
/// missing fields, anonymized description, code that fails even lenient
/// parsing, code referencing terms outside the catalog, and duplicate
/// descriptions. Duplicates keep the most informative annotation: most facet
/// groups, then longest serialization, then lexicographically smallest.
pub fn preprocess(
    records: &[RawRecord],
    tx: &Taxonomy,
    anonymized: &Regex,
) -> (Vec<Sample>, AuditLog) {
    let mut audit = AuditLog {
        input: records.len(),
        ..AuditLog::default()
    };
    let lenient = CodecOptions::lenient();

    let mut cleaned: Vec<(String, Sample)> = Vec::new();
    for record in records {
        if record.description.trim().is_empty()
            || record.base_term_name.trim().is_empty()
            || record.facets_code.trim().is_empty()
        {
            audit.missing += 1;
            continue;
        }
        if anonymized.is_match(&record.description) {
            audit.anonymized += 1;
            continue;
        }
        let Ok(gold) = parse_code_with(&record.facets_code, lenient) else {
            audit.unparseable += 1;
            continue;
        };
        if !validate_code(&gold, tx).is_empty() {
            audit.invalid_reference += 1;
            continue;
        }
        cleaned.push((
            normalized_description(&record.description),
            Sample {
                description: record.description.trim().to_owned(),
                gold,
            },
        ));
    }

    // Group by normalized description, keeping first-seen positions so the
    // output order is independent of which duplicate wins.
    let mut first_seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut winners: BTreeMap<&str, &Sample> = BTreeMap::new();
    for (i, (key, sample)) in cleaned.iter().enumerate() {
        first_seen.entry(key.as_str()).or_insert(i);
        let winner = winners.entry(key.as_str()).or_insert(sample);
        if more_informative(sample, winner)
            || (!more_informative(winner, sample)
                && sample.gold.to_string() < winner.gold.to_string())
        {
            *winner = sample;
        }
    }
    audit.duplicates = cleaned.len() - winners.len();

    let mut ordered: Vec<(usize, Sample)> = winners
        .into_iter()
        .map(|(key, sample)| (first_seen[key], sample.clone()))
        .collect();
    ordered.sort_by_key(|(position, _)| *position);
    let samples: Vec<Sample> = ordered.into_iter().map(|(_, s)| s).collect();

    audit.output = samples.len();
    debug_assert!(audit.balanced());
    (samples, audit)
}

/// Strictly more informative under the dedup rule (excluding the final
/// lexicographic tie-break, which is handled by the caller).
fn more_informative(a: &Sample, b: &Sample) -> bool {
    let (ga, gb) = (a.gold.facets.len(), b.gold.facets.len());
    if ga != gb {
        return ga > gb;
    }
    a.gold.to_string().len() > b.gold.to_string().len()
}

/// Distractor candidates for validation-time ranking checks: hard negatives
/// mined against the sample's own gold base term.
pub fn validation_distractors(
    sample: &Sample,
    tx: &Taxonomy,
    cfg: &MiningConfig,
) -> Result<HardNegativeSet, MiningError> {
    mine_hard_negatives(&sample.gold.base_term, cfg, tx)
}

/// Splits samples into train/val/test.
///
/// Stratified mode allocates each base-term group proportionally (largest
/// remainder), drawing test first and validation from the remainder.
/// OOS mode moves whole base-term groups into test, in seeded shuffle order,
/// stopping at the first crossing of the target; no validation set, and the
/// base terms of train and test are disjoint by construction.
pub fn split(samples: &[Sample], spec: &SplitSpec) -> Result<Splits, DatasetError> {
    let n = samples.len();
    let budget = match spec.mode {
        SplitMode::Stratified => spec.test_target_size + spec.val_target_size,
        SplitMode::Oos => spec.test_target_size,
    };
    if budget >= n {
        return Err(DatasetError::TargetTooLarge {
            requested: budget,
            available: n,
        });
    }

    let mut groups: BTreeMap<&TermCode, Vec<usize>> = BTreeMap::new();
    for (i, sample) in samples.iter().enumerate() {
        groups.entry(&sample.gold.base_term).or_default().push(i);
    }

    match spec.mode {
        SplitMode::Oos => {
            let mut order: Vec<&TermCode> = groups.keys().copied().collect();
            let mut rng = seeded_rng(spec.seed, "split-oos");
            shuffle(&mut rng, &mut order);
            let mut test_idx = Vec::new();
            let mut train_idx = Vec::new();
            for code in order {
                if test_idx.len() < spec.test_target_size {
                    test_idx.extend(&groups[code]);
                } else {
                    train_idx.extend(&groups[code]);
                }
            }
            Ok(collect_splits(samples, train_idx, Vec::new(), test_idx))
        }
        SplitMode::Stratified => {
            let keys: Vec<&TermCode> = groups.keys().copied().collect();
            let sizes: Vec<usize> = keys.iter().map(|k| groups[*k].len()).collect();
            let test_quota = largest_remainder(&sizes, spec.test_target_size);

            let mut test_idx = Vec::new();
            let mut leftover: Vec<Vec<usize>> = Vec::with_capacity(keys.len());
            for (key, quota) in keys.iter().zip(&test_quota) {
                let mut members = groups[*key].clone();
                let mut rng = seeded_rng(spec.seed, &format!("split-test-{key}"));
                shuffle(&mut rng, &mut members);
                let take = (*quota).min(members.len());
                test_idx.extend(&members[..take]);
                leftover.push(members[take..].to_vec());
            }

            let remaining_sizes: Vec<usize> = leftover.iter().map(Vec::len).collect();
            let val_quota = largest_remainder(&remaining_sizes, spec.val_target_size);
            let mut val_idx = Vec::new();
            let mut train_idx = Vec::new();
            for ((key, members), quota) in keys.iter().zip(leftover).zip(&val_quota) {
                let mut members = members;
                let mut rng = seeded_rng(spec.seed, &format!("split-val-{key}"));
                shuffle(&mut rng, &mut members);
                let take = (*quota).min(members.len());
                val_idx.extend(&members[..take]);
                train_idx.extend(&members[take..]);
            }
            Ok(collect_splits(samples, train_idx, val_idx, test_idx))
        }
    }
}

/// Proportional integer allocation: floor the exact quotas, then hand the
/// leftover units to the largest fractional remainders (ties to earlier
/// groups, which arrive in sorted key order).
fn largest_remainder(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 || target == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = Vec::with_capacity(sizes.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(sizes.len());
    let mut allocated = 0usize;
    for (i, &size) in sizes.iter().enumerate() {
        let exact = target as f64 * size as f64 / total as f64;
        let floor = (exact.floor() as usize).min(size);
        quotas.push(floor);
        allocated += floor;
        remainders.push((exact - floor as f64, i));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut shortfall = target.saturating_sub(allocated);
    for (_, i) in remainders {
        if shortfall == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            shortfall -= 1;
        }
    }
    quotas
}

fn collect_splits(
    samples: &[Sample],
    mut train: Vec<usize>,
    mut val: Vec<usize>,
    mut test: Vec<usize>,
) -> Splits {
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Splits {
        train: pick(&train),
        val: pick(&val),
        test: pick(&test),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::CATALOG_HEADER;
    use std::collections::BTreeSet;

    fn catalog() -> Taxonomy {
        let mut records = String::from("R0000\tfoods\tBASE\t\t\t\n");
        for i in 1..=9 {
            records.push_str(&format!("A000{i}\tterm {i}\tBASE\tR0000\t\t\n"));
        }
        records.push_str("F0400\tingredients\tF04\t\t\t\n");
        records.push_str("F0401\twheat\tF04\tF0400\t\t\n");
        records.push_str("F0402\trye\tF04\tF0400\t\t\n");
        Taxonomy::from_catalog_str(&format!("{CATALOG_HEADER}\n{records}")).unwrap()
    }

    fn raw(description: &str, code: &str) -> RawRecord {
        RawRecord {
            description: description.to_owned(),
            base_term_name: "name".to_owned(),
            facets_code: code.to_owned(),
        }
    }

    #[test]
    fn csv_round_trip_with_quoting() {
        let records = vec![
            raw("plain bread", "A0001"),
            raw("bread, \"fancy\"\nwith newline", "A0002#F04.F0401"),
        ];
        let mut buffer = Vec::new();
        write_raw_csv(&records, &mut buffer).unwrap();
        let back = read_raw_csv(buffer.as_slice()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn rejects_wrong_header() {
        let err = read_raw_csv("FOO,BAR,BAZ\na,b,c\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::BadHeader(_)));
    }

    #[test]
    fn planted_defects_are_counted_exactly() {
        let tx = catalog();
        let mut records = vec![
            // 3 missing
            raw("", "A0001"),
            raw("fine text", ""),
            RawRecord {
                description: "fine".into(),
                base_term_name: "  ".into(),
                facets_code: "A0001".into(),
            },
            // 2 anonymized
            raw("milk [BRAND] carton", "A0001"),
            raw("cheese [REDACTED_2]", "A0002"),
            // 2 unparseable even leniently
            raw("soup one", "A01"),
            raw("soup two", "A0001#F04F0401"),
            // 2 invalid references
            raw("ghost base", "Z9999"),
            raw("ghost descriptor", "A0001#F04.F0499"),
        ];
        // 4 keepers, two of which collide after normalization (1 duplicate).
        records.push(raw("Rye  Bread", "A0003#F04.F0402"));
        records.push(raw("rye bread", "A0003"));
        records.push(raw("water", "A0004"));
        records.push(raw("apple juice", "A0005"));

        let (samples, audit) = preprocess(&records, &tx, &default_anonymized_pattern());
        assert_eq!(audit.input, 13);
        assert_eq!(audit.missing, 3);
        assert_eq!(audit.anonymized, 2);
        assert_eq!(audit.unparseable, 2);
        assert_eq!(audit.invalid_reference, 2);
        assert_eq!(audit.duplicates, 1);
        assert_eq!(audit.output, 3);
        assert!(audit.balanced());
        assert_eq!(samples.len(), 3);
        // The more informative duplicate (one facet group vs none) wins.
        assert_eq!(samples[0].gold.to_string(), "A0003#F04.F0402");
    }

    #[test]
    fn dedup_tie_breaks() {
        let tx = catalog();
        // Same group count: longer serialization wins.
        let (samples, _) = preprocess(
            &[
                raw("toast", "A0001#F04.F0401"),
                raw("toast", "A0002#F04.F0401"),
            ],
            &tx,
            &default_anonymized_pattern(),
        );
        assert_eq!(samples.len(), 1);
        // Equal length: lexicographically smallest.
        assert_eq!(samples[0].gold.to_string(), "A0001#F04.F0401");

        let (samples, _) = preprocess(
            &[raw("loaf", "A0002"), raw("loaf", "A0001")],
            &tx,
            &default_anonymized_pattern(),
        );
        assert_eq!(samples[0].gold.to_string(), "A0001");
    }

    #[test]
    fn lenient_repair_keeps_fixable_codes() {
        let tx = catalog();
        let (samples, audit) = preprocess(
            &[raw("warm bread", " a0001#f04.f0401 ")],
            &tx,
            &default_anonymized_pattern(),
        );
        assert_eq!(audit.unparseable, 0);
        assert_eq!(samples[0].gold.to_string(), "A0001#F04.F0401");
    }

    #[test]
    fn preprocess_is_idempotent() {
        let tx = catalog();
        let records = vec![
            raw("Rye  Bread", "A0003#F04.F0402"),
            raw("rye bread", "A0003"),
            raw("water", "A0004"),
            raw("milk [BRAND]", "A0001"),
        ];
        let (first, _) = preprocess(&records, &tx, &default_anonymized_pattern());
        let as_records: Vec<RawRecord> = first
            .iter()
            .map(|s| raw(&s.description, &s.gold.to_string()))
            .collect();
        let (second, audit) = preprocess(&as_records, &tx, &default_anonymized_pattern());
        assert_eq!(first, second);
        assert_eq!(audit.input, audit.output);
    }

    fn sample(description: &str, code: &str) -> Sample {
        Sample {
            description: description.to_owned(),
            gold: code.parse().unwrap(),
        }
    }

    fn corpus(sizes: &[(usize, usize)]) -> Vec<Sample> {
        // sizes: (base term digit, count)
        let mut out = Vec::new();
        for (digit, count) in sizes {
            for j in 0..*count {
                out.push(sample(&format!("food {digit} {j}"), &format!("A000{digit}")));
            }
        }
        out
    }

    fn base_set(samples: &[Sample]) -> BTreeSet<&TermCode> {
        samples.iter().map(|s| &s.gold.base_term).collect()
    }

    #[test]
    fn oos_moves_whole_groups_until_first_crossing() {
        let samples = corpus(&[(1, 8), (2, 7), (3, 6), (4, 4)]);
        let spec = SplitSpec {
            mode: SplitMode::Oos,
            seed: 42,
            test_target_size: 10,
            val_target_size: 0,
        };
        let splits = split(&samples, &spec).unwrap();
        assert!(splits.val.is_empty());
        assert!(splits.test.len() >= 10);
        assert!(base_set(&splits.train).is_disjoint(&base_set(&splits.test)));
        assert_eq!(splits.train.len() + splits.test.len(), samples.len());

        // First crossing: the prefix before the final group was still below
        // target, so dropping the largest group must dip below it too.
        let max_group = base_set(&splits.test)
            .iter()
            .map(|b| splits.test.iter().filter(|s| &&s.gold.base_term == b).count())
            .max()
            .unwrap();
        assert!(splits.test.len() - max_group < 10);
    }

    #[test]
    fn oos_respects_shuffled_group_order() {
        let samples = corpus(&[(1, 4), (2, 3), (3, 3), (4, 2)]);
        let spec = SplitSpec {
            mode: SplitMode::Oos,
            seed: 7,
            test_target_size: 5,
            val_target_size: 0,
        };
        let splits = split(&samples, &spec).unwrap();

        // Recompute the expected prefix with the same generator.
        let mut order: Vec<&TermCode> = base_set(&samples).into_iter().collect();
        let mut rng = seeded_rng(7, "split-oos");
        shuffle(&mut rng, &mut order);
        let mut expected = BTreeSet::new();
        let mut count = 0;
        for code in order {
            if count < 5 {
                expected.insert(code);
                count += samples.iter().filter(|s| &s.gold.base_term == code).count();
            }
        }
        assert_eq!(base_set(&splits.test), expected);
    }

    #[test]
    fn stratified_allocates_proportionally() {
        let samples = corpus(&[(1, 40), (2, 30), (3, 20), (4, 10)]);
        let spec = SplitSpec {
            mode: SplitMode::Stratified,
            seed: 42,
            test_target_size: 20,
            val_target_size: 10,
        };
        let splits = split(&samples, &spec).unwrap();
        assert_eq!(splits.test.len(), 20);
        assert_eq!(splits.val.len(), 10);
        assert_eq!(splits.train.len(), 70);

        // Proportions preserved within one sample per class.
        for (digit, count) in [(1, 40.0), (2, 30.0), (3, 20.0), (4, 10.0)] {
            let code: TermCode = format!("A000{digit}").parse().unwrap();
            let in_test = splits.test.iter().filter(|s| s.gold.base_term == code).count();
            let expected = 20.0 * count / 100.0;
            assert!(
                (in_test as f64 - expected).abs() <= 1.0,
                "class {digit}: {in_test} vs {expected}"
            );
        }
    }

    #[test]
    fn partition_has_no_loss_or_duplication() {
        let samples = corpus(&[(1, 13), (2, 9), (3, 5), (4, 1), (5, 1)]);
        for mode in [SplitMode::Stratified, SplitMode::Oos] {
            let spec = SplitSpec {
                mode,
                seed: 3,
                test_target_size: 8,
                val_target_size: 4,
            };
            let splits = split(&samples, &spec).unwrap();
            let mut all: Vec<&str> = splits
                .train
                .iter()
                .chain(&splits.val)
                .chain(&splits.test)
                .map(|s| s.description.as_str())
                .collect();
            all.sort_unstable();
            let mut expected: Vec<&str> = samples.iter().map(|s| s.description.as_str()).collect();
            expected.sort_unstable();
            assert_eq!(all, expected, "{mode:?}");
        }
    }

    #[test]
    fn single_sample_classes_stay_in_train_unless_sampled() {
        let samples = corpus(&[(1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (6, 1)]);
        let spec = SplitSpec {
            mode: SplitMode::Stratified,
            seed: 42,
            test_target_size: 2,
            val_target_size: 0,
        };
        let splits = split(&samples, &spec).unwrap();
        assert_eq!(splits.test.len(), 2);
        assert_eq!(splits.train.len(), 4);
    }

    #[test]
    fn same_seed_reruns_identical_different_seed_differs() {
        let samples = corpus(&[(1, 20), (2, 20), (3, 20), (4, 20)]);
        for mode in [SplitMode::Stratified, SplitMode::Oos] {
            let spec = SplitSpec {
                mode,
                seed: 42,
                test_target_size: 20,
                val_target_size: 10,
            };
            let a = split(&samples, &spec).unwrap();
            let b = split(&samples, &spec).unwrap();
            assert_eq!(a.train, b.train);
            assert_eq!(a.val, b.val);
            assert_eq!(a.test, b.test);
        }
        let stratified = |seed| {
            split(
                &samples,
                &SplitSpec {
                    mode: SplitMode::Stratified,
                    seed,
                    test_target_size: 20,
                    val_target_size: 0,
                },
            )
            .unwrap()
        };
        assert_ne!(stratified(1).test, stratified(2).test);
    }

    #[test]
    fn oversized_targets_are_rejected() {
        let samples = corpus(&[(1, 5)]);
        for (mode, test, val) in [
            (SplitMode::Stratified, 3, 2),
            (SplitMode::Stratified, 6, 0),
            (SplitMode::Oos, 5, 0),
        ] {
            let spec = SplitSpec {
                mode,
                seed: 42,
                test_target_size: test,
                val_target_size: val,
            };
            assert!(matches!(
                split(&samples, &spec),
                Err(DatasetError::TargetTooLarge { .. })
            ));
        }
    }

    #[test]
    fn samples_csv_round_trip() {
        let samples = vec![
            sample("rye bread, dark", "A0003#F04.F0402"),
            sample("water", "A0004"),
        ];
        let mut buffer = Vec::new();
        write_samples_csv(&samples, &mut buffer).unwrap();
        let back = read_samples_csv(buffer.as_slice()).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn distractors_come_from_the_gold_base_term() {
        let tx = catalog();
        let s = sample("water", "A0004");
        let cfg = MiningConfig::default();
        let negatives = validation_distractors(&s, &tx, &cfg).unwrap();
        assert_eq!(negatives.target, "A0004".parse().unwrap());
        assert!(!negatives.negatives.is_empty());
        assert!(negatives.negatives.iter().all(|n| n.code != s.gold.base_term));
    }
}
