//! Structured training set, random test sets, label normalization and CSV
//! persistence.
//!
//! The training set holds the reference composition plus one group per
//! component in which only that component departs from the reference:
//!
//! | group | values                                   | count |
//! |-------|------------------------------------------|-------|
//! | M     | 0, 10, 20, 40, 50 %                      | 5     |
//! | Al    | 0, 2, 6, 8, 10 %                         | 5     |
//! | C     | 10, 20, 30, 40, 50 %                     | 5     |
//! | N/P/K | 0.2, 0.4, 0.6, 0.8, 2, 4, 6, 8, 10 ‰     | 9 each|
//!
//! 1 + 5 + 5 + 5 + 27 = 43 samples.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soil_forward::{sense, Component, NoiseConfig, SensingVector, SoilSample};

pub const TRAINING_SET_SIZE: usize = 43;
pub const DEFAULT_TEST_COUNT: usize = 55;

pub const CSV_HEADER: [&str; 15] = [
    "tag", "m_pct", "c_pct", "al_pct", "n_pml", "p_pml", "k_pml", "epsilon", "v460", "v620",
    "v1200", "v1300", "v1450", "v1550", "v1650",
];

const M_GRID: [f64; 5] = [0.0, 10.0, 20.0, 40.0, 50.0];
const AL_GRID: [f64; 5] = [0.0, 2.0, 6.0, 8.0, 10.0];
const C_GRID: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];
const NPK_GRID: [f64; 9] = [0.2, 0.4, 0.6, 0.8, 2.0, 4.0, 6.0, 8.0, 10.0];

/// Group a sample belongs to. `Rnd` marks random samples outside the
/// one-component-at-a-time structure (test sets and augmentation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupTag {
    Ref,
    M,
    N,
    P,
    K,
    C,
    Al,
    Rnd,
}

impl GroupTag {
    pub fn for_component(c: Component) -> Self {
        match c {
            Component::M => GroupTag::M,
            Component::N => GroupTag::N,
            Component::P => GroupTag::P,
            Component::K => GroupTag::K,
            Component::C => GroupTag::C,
            Component::Al => GroupTag::Al,
        }
    }

    pub fn component(self) -> Option<Component> {
        match self {
            GroupTag::M => Some(Component::M),
            GroupTag::N => Some(Component::N),
            GroupTag::P => Some(Component::P),
            GroupTag::K => Some(Component::K),
            GroupTag::C => Some(Component::C),
            GroupTag::Al => Some(Component::Al),
            GroupTag::Ref | GroupTag::Rnd => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroupTag::Ref => "REF",
            GroupTag::M => "M",
            GroupTag::N => "N",
            GroupTag::P => "P",
            GroupTag::K => "K",
            GroupTag::C => "C",
            GroupTag::Al => "AL",
            GroupTag::Rnd => "RND",
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "REF" => GroupTag::Ref,
            "M" => GroupTag::M,
            "N" => GroupTag::N,
            "P" => GroupTag::P,
            "K" => GroupTag::K,
            "C" => GroupTag::C,
            "AL" => GroupTag::Al,
            "RND" => GroupTag::Rnd,
            other => return Err(Error::Format(format!("unknown group tag {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub composition: SoilSample,
    pub sensing: SensingVector,
    pub tag: GroupTag,
}

/// Min-max ranges per component, canonical order [M, N, P, K, C, Al].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub ranges: [(f64, f64); 6],
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec {
            ranges: Component::ALL.map(Component::range),
        }
    }
}

impl NormSpec {
    pub fn validate(&self) -> Result<()> {
        for (c, (lo, hi)) in Component::ALL.iter().zip(self.ranges) {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "normalization range of {} is empty: [{lo}, {hi}]",
                    c.name()
                )));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, y: &SoilSample) -> Result<[f64; 6]> {
        let values = y.to_array();
        let mut out = [0.0; 6];
        for (i, c) in Component::ALL.iter().enumerate() {
            let (lo, hi) = self.ranges[i];
            let v = values[i];
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::Domain(format!(
                    "{} = {v} outside normalization range [{lo}, {hi}]",
                    c.name()
                )));
            }
            out[i] = (v - lo) / (hi - lo);
        }
        Ok(out)
    }

    pub fn denormalize(&self, y_norm: &[f64; 6]) -> SoilSample {
        let mut values = [0.0; 6];
        for i in 0..6 {
            let (lo, hi) = self.ranges[i];
            values[i] = lo + y_norm[i] * (hi - lo);
        }
        SoilSample::from_array(values)
    }

    /// Width of each component range, for converting normalized errors back to units.
    pub fn spans(&self) -> [f64; 6] {
        self.ranges.map(|(lo, hi)| hi - lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub norm: NormSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn reference(&self) -> Option<&LabeledSample> {
        self.samples.iter().find(|s| s.tag == GroupTag::Ref)
    }

    pub fn group_counts(&self) -> BTreeMap<GroupTag, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.tag).or_insert(0) += 1;
        }
        counts
    }

    pub fn normalized_labels(&self) -> Result<Vec<[f64; 6]>> {
        self.samples
            .iter()
            .map(|s| self.norm.normalize(&s.composition))
            .collect()
    }

    /// Checks the reference/group structure needed to extract component directions.
    pub fn validate_training_structure(&self) -> Result<()> {
        let refs: Vec<_> = self.samples.iter().filter(|s| s.tag == GroupTag::Ref).collect();
        if refs.len() != 1 {
            return Err(Error::Structure(format!(
                "expected exactly one REF sample, found {}",
                refs.len()
            )));
        }
        let reference = refs[0].composition;
        let counts = self.group_counts();
        for c in Component::ALL {
            let tag = GroupTag::for_component(c);
            if counts.get(&tag).copied().unwrap_or(0) == 0 {
                return Err(Error::Structure(format!("group {tag} is empty")));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            let Some(group) = s.tag.component() else {
                continue;
            };
            for c in Component::ALL {
                if c != group && s.composition.get(c) != reference.get(c) {
                    return Err(Error::Structure(format!(
                        "sample {i} in group {} also changes {}",
                        s.tag,
                        c.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Unordered pairs among `l` samples.
pub fn pair_count(l: usize) -> usize {
    l * l.saturating_sub(1) / 2
}

fn label(composition: SoilSample, tag: GroupTag, noise: &NoiseConfig, index: usize) -> LabeledSample {
    LabeledSample {
        composition,
        sensing: sense(&composition, &noise.for_index(index)),
        tag,
    }
}

/// The canonical 43-sample training set.
pub fn gen_training_set(noise: &NoiseConfig) -> Dataset {
    let reference = SoilSample::REFERENCE;
    let mut compositions = vec![(reference, GroupTag::Ref)];
    let groups: [(Component, &[f64]); 6] = [
        (Component::M, &M_GRID),
        (Component::Al, &AL_GRID),
        (Component::C, &C_GRID),
        (Component::N, &NPK_GRID),
        (Component::P, &NPK_GRID),
        (Component::K, &NPK_GRID),
    ];
    for (c, grid) in groups {
        for &v in grid {
            compositions.push((reference.with(c, v), GroupTag::for_component(c)));
        }
    }
    let samples = compositions
        .into_iter()
        .enumerate()
        .map(|(i, (comp, tag))| label(comp, tag, noise, i))
        .collect();
    Dataset {
        samples,
        norm: NormSpec::default(),
        seed: noise.seed,
    }
}

/// Uniform draw of a composition over the full component ranges.
pub fn random_composition<R: Rng + ?Sized>(rng: &mut R) -> SoilSample {
    let mut s = SoilSample::default();
    for c in Component::ALL {
        let (lo, hi) = c.range();
        s.set(c, rng.random_range(lo..=hi));
    }
    s
}

/// `count` random samples; compositions come from `seed`, sensing noise from `noise`.
pub fn gen_test_set(count: usize, seed: u64, noise: &NoiseConfig) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("test set needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|i| label(random_composition(&mut rng), GroupTag::Rnd, noise, i))
        .collect();
    Ok(Dataset {
        samples,
        norm: NormSpec::default(),
        seed,
    })
}

/// Positional decimal with 17 significant digits (exact f64 round trip).
fn fmt_decimal(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.16}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (16 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for s in &ds.samples {
        let c = &s.composition;
        let mut row = vec![s.tag.as_str().to_string()];
        row.extend(
            [c.m_pct, c.c_pct, c.al_pct, c.n_pml, c.p_pml, c.k_pml, s.sensing.epsilon]
                .into_iter()
                .chain(s.sensing.vnir)
                .map(fmt_decimal),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    let mut text = fs::read_to_string(path)?;
    text.push_str(&format!("# seed={}\n", ds.seed));
    fs::write(path, text)?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut seed = 0u64;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("# seed=") {
            seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad seed comment {line:?}")))?;
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "missing or unexpected header; expected {}",
            CSV_HEADER.join(",")
        )));
    }
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            });
        }
        let tag: GroupTag = record[0].parse().map_err(|e: Error| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let mut values = [0.0; 14];
        for (i, v) in values.iter_mut().enumerate() {
            *v = record[i + 1].trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{} = {:?} is not a number", CSV_HEADER[i + 1], &record[i + 1]),
            })?;
        }
        let composition = SoilSample {
            m_pct: values[0],
            c_pct: values[1],
            al_pct: values[2],
            n_pml: values[3],
            p_pml: values[4],
            k_pml: values[5],
        };
        let in_range = |e: Error| Error::Domain(format!("line {line}: {e}"));
        composition.validate().map_err(in_range)?;
        let vnir: [f64; 7] = values[7..].try_into().unwrap();
        let sensing = SensingVector::new(values[6], vnir).map_err(in_range)?;
        samples.push(LabeledSample {
            composition,
            sensing,
            tag,
        });
    }
    Ok(Dataset {
        samples,
        norm: NormSpec::default(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn training_set_structure() {
        let ds = gen_training_set(&NoiseConfig::noiseless(0));
        assert_eq!(ds.len(), TRAINING_SET_SIZE);
        ds.validate_training_structure().unwrap();
        let counts = ds.group_counts();
        let expect = [
            (GroupTag::Ref, 1),
            (GroupTag::M, 5),
            (GroupTag::Al, 5),
            (GroupTag::C, 5),
            (GroupTag::N, 9),
            (GroupTag::P, 9),
            (GroupTag::K, 9),
        ];
        assert_eq!(counts, expect.into_iter().collect());
        assert_eq!(ds.reference().unwrap().composition, SoilSample::REFERENCE);
        let m1 = SoilSample { m_pct: 10.0, al_pct: 4.0, ..SoilSample::default() };
        assert!(ds.samples.iter().any(|s| s.tag == GroupTag::M && s.composition == m1));
        for s in ds.samples.iter().filter(|s| s.tag != GroupTag::Ref) {
            let diffs = Component::ALL
                .iter()
                .filter(|c| s.composition.get(**c) != SoilSample::REFERENCE.get(**c))
                .count();
            assert_eq!(diffs, 1, "{s:?}");
        }
    }

    #[test]
    fn pair_counts() {
        assert_eq!(pair_count(43), 903);
        assert_eq!(pair_count(2), 1);
        assert_eq!(pair_count(1), 0);
        assert_eq!(pair_count(0), 0);
    }

    #[test]
    fn structure_violations() {
        let mut ds = gen_training_set(&NoiseConfig::noiseless(0));
        ds.samples.retain(|s| s.tag != GroupTag::K);
        assert!(matches!(ds.validate_training_structure(), Err(Error::Structure(_))));
        let mut ds = gen_training_set(&NoiseConfig::noiseless(0));
        ds.samples[3].composition.c_pct = 5.0;
        assert!(ds.validate_training_structure().is_err());
        let mut ds = gen_training_set(&NoiseConfig::noiseless(0));
        ds.samples.remove(0);
        assert!(ds.validate_training_structure().is_err());
    }

    #[test]
    fn test_set_is_seeded_and_in_range() {
        let noise = NoiseConfig::default();
        let a = gen_test_set(DEFAULT_TEST_COUNT, 5, &noise).unwrap();
        let b = gen_test_set(DEFAULT_TEST_COUNT, 5, &noise).unwrap();
        assert_eq!(a.len(), 55);
        assert_eq!(a, b);
        assert_ne!(a, gen_test_set(55, 6, &noise).unwrap());
        for s in &a.samples {
            s.composition.validate().unwrap();
            s.sensing.validate().unwrap();
            assert_eq!(s.tag, GroupTag::Rnd);
        }
        assert!(gen_test_set(0, 1, &noise).is_err());
    }

    #[test]
    fn normalization_examples() {
        let norm = NormSpec::default();
        let r = norm.normalize(&SoilSample::REFERENCE).unwrap();
        let expect = [0.6, 0.0, 0.0, 0.0, 0.0, 0.4];
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(norm.normalize(&SoilSample::default()).unwrap(), [0.0; 6]);
        let max = SoilSample::from_array(Component::ALL.map(|c| c.range().1));
        assert_eq!(norm.normalize(&max).unwrap(), [1.0; 6]);
        assert!(norm.normalize(&SoilSample { m_pct: 51.0, ..SoilSample::default() }).is_err());
        norm.validate().unwrap();
        let mut bad = norm;
        bad.ranges[2] = (1.0, 1.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn decimal_format_keeps_precision() {
        for x in [0.0, 30.0, 0.1, 1.0 / 3.0, 20.680923, 1e-7, 0.49999999999999994] {
            let s = fmt_decimal(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let digits = s.chars().filter(|c| c.is_ascii_digit()).count();
            assert!(digits >= 15, "{s}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let ds = gen_training_set(&NoiseConfig { seed: 11, ..NoiseConfig::default() });
        save_csv(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&(CSV_HEADER.join(",") + "\n")));
        assert!(!text.contains('\r'));
        let back = load_csv(&path).unwrap();
        assert_eq!(back, ds);
        let counts = back.group_counts();
        assert_eq!(counts[&GroupTag::N], 9);
        assert_eq!(counts[&GroupTag::Ref], 1);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "REF,30,0,4,0,0,0,20,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Format(_))));

        let header = CSV_HEADER.join(",");
        std::fs::write(&path, format!("{header}\nREF,30,0,4,0,0,0,20,0.1,0.1,0.1,0.1,0.1,0.1,0.1\nM,abc,0,4,0,0,0,20,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n")).unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, format!("{header}\nM,60,0,4,0,0,0,20,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n")).unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Domain(_))));

        std::fs::write(&path, format!("{header}\nXX,30,0,4,0,0,0,20,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n")).unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn normalize_round_trip(seed in any::<u64>()) {
            let norm = NormSpec::default();
            let y = random_composition(&mut ChaCha8Rng::seed_from_u64(seed));
            let back = norm.denormalize(&norm.normalize(&y).unwrap());
            for (a, b) in y.to_array().iter().zip(back.to_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
