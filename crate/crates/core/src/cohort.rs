//! Synthetic imbalanced cohorts with a planted per-subgroup difficulty, and
//! stratified train/validation/test splitting.
//!
//! Every subgroup draws its two classes from isotropic Gaussians whose means are
//! `separation * noise_sigma` apart along a shared disease direction. Each
//! subgroup also sits at its own offset in feature space (its "appearance"),
//! so demographic membership is visible in the image features the same way age
//! or skin tone would be. Feature 0 is a constant intercept channel. A subgroup
//! may tilt its disease direction away from the shared one, which makes its
//! positives hard to recognise for a model fit mostly to other subgroups.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subgroup::SubgroupKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupSpec {
    pub key: SubgroupKey,
    pub n: usize,
    pub prevalence: f64,
    /// Distance between the class means in units of `noise_sigma`.
    pub separation: f64,
    /// Fraction of a right angle by which this subgroup's disease axis turns
    /// away from the shared one, toward a direction of its own. The negative
    /// class stays where an untilted subgroup would put it, so a tilted
    /// subgroup's positives present atypically.
    #[serde(default)]
    pub tilt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    /// Names of the attributes making up each subgroup key, in key order.
    pub attributes: Vec<String>,
    pub subgroups: Vec<SubgroupSpec>,
    pub d_in: usize,
    pub noise_sigma: f64,
    /// Norm of each subgroup's appearance offset, in units of `noise_sigma`.
    #[serde(default = "default_appearance_shift")]
    pub appearance_shift: f64,
    pub seed: u64,
}

fn default_appearance_shift() -> f64 {
    1.0
}

/// One patient sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub subgroup: SubgroupKey,
}

/// Positive count for a subgroup: `n * prevalence` rounded half up.
pub fn positive_count(n: usize, prevalence: f64) -> usize {
    let exact = n as f64 * prevalence;
    // Guard against representation error such as 100 * 0.37 = 37.000000000000007.
    let nearest = exact.round();
    let v = if (exact - nearest).abs() < 1e-9 {
        nearest
    } else {
        (exact + 0.5).floor()
    };
    (v as usize).min(n)
}

impl CohortSpec {
    pub fn total(&self) -> usize {
        self.subgroups.iter().map(|s| s.n).sum()
    }

    /// The same population with every subgroup `factor` times larger.
    pub fn scaled(&self, factor: usize) -> Self {
        let mut s = self.clone();
        s.subgroups.iter_mut().for_each(|g| g.n *= factor);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.subgroups.is_empty() || self.total() == 0 {
            return Err(Error::Empty("cohort spec"));
        }
        if self.d_in < 2 {
            return Err(Error::InvalidConfig("d_in must be at least 2".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if !(self.appearance_shift.is_finite() && self.appearance_shift >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "appearance_shift must be >= 0, got {}",
                self.appearance_shift
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, s) in self.subgroups.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.prevalence) {
                return Err(Error::InvalidConfig(format!(
                    "subgroups[{i}].prevalence must be in [0, 1], got {}",
                    s.prevalence
                )));
            }
            if !(0.0..=1.0).contains(&s.tilt) {
                return Err(Error::InvalidConfig(format!(
                    "subgroups[{i}].tilt must be in [0, 1], got {}",
                    s.tilt
                )));
            }
            if !s.separation.is_finite() || s.separation < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "subgroups[{i}].separation must be finite and >= 0, got {}",
                    s.separation
                )));
            }
            if s.key.values().len() != self.attributes.len() {
                return Err(Error::InvalidConfig(format!(
                    "subgroups[{i}].key has {} values but {} attributes are declared",
                    s.key.values().len(),
                    self.attributes.len()
                )));
            }
            if !seen.insert(&s.key) {
                return Err(Error::InvalidConfig(format!(
                    "subgroups[{i}].key `{}` is duplicated",
                    s.key
                )));
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // A single free dimension leaves nothing orthogonal to the disease axis.
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Project out `dir` (unit) from `v`.
fn orthogonalize(v: &mut [f64], dir: &[f64]) {
    let d: f64 = v.iter().zip(dir).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(dir).for_each(|(a, b)| *a -= d * b);
}

/// Draw the cohort. A pure function of the spec, seed included.
pub fn generate(spec: &CohortSpec) -> Result<Vec<SampleRecord>> {
    generate_draw(spec, 0)
}

/// Draw `draw` of the cohort. Every draw shares the feature geometry fixed by
/// the seed (disease axes, appearance offsets) and has its own sample noise, so
/// `draw > 0` yields independent samples from the same population.
pub fn generate_draw(spec: &CohortSpec, draw: u64) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let free = spec.d_in - 1;
    let sigma = spec.noise_sigma;

    let disease = unit(gaussian_vec(&mut rng, free));
    let appearances: Vec<Vec<f64>> = spec
        .subgroups
        .iter()
        .map(|_| {
            let mut v = gaussian_vec(&mut rng, free);
            orthogonalize(&mut v, &disease);
            unit(v)
                .into_iter()
                .map(|x| x * spec.appearance_shift * sigma)
                .collect()
        })
        .collect();

    let axes: Vec<Vec<f64>> = spec
        .subgroups
        .iter()
        .map(|sg| {
            let mut own = gaussian_vec(&mut rng, free);
            orthogonalize(&mut own, &disease);
            let own = unit(own);
            let theta = sg.tilt * std::f64::consts::FRAC_PI_2;
            disease
                .iter()
                .zip(&own)
                .map(|(d, o)| theta.cos() * d + theta.sin() * o)
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1 + draw);
    let mut records = Vec::with_capacity(spec.total());
    for ((sg, offset), axis) in spec.subgroups.iter().zip(&appearances).zip(&axes) {
        let positives = positive_count(sg.n, sg.prevalence);
        let gap = sg.separation * sigma;
        // Negatives sit half a gap below the subgroup centre on the shared axis;
        // positives sit one full gap away from them along the subgroup's axis.
        let negative_mean: Vec<f64> = (0..free).map(|d| offset[d] - 0.5 * gap * disease[d]).collect();
        let positive_mean: Vec<f64> = (0..free).map(|d| negative_mean[d] + gap * axis[d]).collect();
        for k in 0..sg.n {
            let label = usize::from(k < positives);
            let mean = if label == 1 { &positive_mean } else { &negative_mean };
            let mut features = Vec::with_capacity(spec.d_in);
            features.push(1.0);
            for m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(m + sigma * noise);
            }
            records.push(SampleRecord {
                id: 0,
                features,
                label,
                subgroup: sg.key.clone(),
            });
        }
    }
    records.shuffle(&mut rng);
    for (i, r) in records.iter_mut().enumerate() {
        r.id = i as u64;
    }
    Ok(records)
}

/// Largest-remainder apportionment of `n` items over `fractions`; ties in the
/// remainders are broken by `tie_order` (earlier wins).
fn apportion(n: usize, fractions: &[f64; 3], tie_order: &[usize; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    let mut rema = [0.0f64; 3];
    for k in 0..3 {
        // Snap values like 4.999999999 onto the integer they represent.
        let q = if (quotas[k] - quotas[k].round()).abs() < 1e-9 {
            quotas[k].round()
        } else {
            quotas[k]
        };
        sizes[k] = q.floor() as usize;
        rema[k] = q - q.floor();
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = tie_order.to_vec();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rema[a], rema[b]);
        if (ra - rb).abs() < 1e-9 {
            std::cmp::Ordering::Equal
        } else {
            rb.total_cmp(&ra)
        }
    });
    for k in order {
        if left == 0 {
            break;
        }
        sizes[k] += 1;
        left -= 1;
    }
    sizes
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

/// Split every (subgroup x label) cell by largest-remainder apportionment.
pub fn stratified_split(records: &[SampleRecord], fractions: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(fractions));
    }
    let mut cells: BTreeMap<(&SubgroupKey, usize), Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((&r.subgroup, r.label)).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut cell) in cells {
        cell.sort_by_key(|r| r.id);
        cell.shuffle(&mut rng);
        let mut tie_order = [0, 1, 2];
        tie_order.shuffle(&mut rng);
        let sizes = apportion(cell.len(), &fractions, &tie_order);
        let mut it = cell.into_iter().cloned();
        split.train.extend(it.by_ref().take(sizes[0]));
        split.val.extend(it.by_ref().take(sizes[1]));
        split.test.extend(it);
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_by_key(|r| r.id);
    }
    Ok(split)
}

fn key(values: &[&str]) -> SubgroupKey {
    SubgroupKey::new(values.iter().copied())
}

/// Built-in cohort shapes scaled to 1,200 samples.
///
/// `derm6`: age bin (0-40, 41-60, 60+) x gender. Males 60+ are the largest
/// subgroup with the highest prevalence (0.377); females 0-40 have the lowest
/// (0.063). The remaining sizes and prevalences are interpolated from the
/// dermatology test-set composition. Males 60+ are also the hard subgroup:
/// lowest separation, with positives presenting off the shared disease axis.
///
/// `oph8`: age bin (0-60, 60+) x gender x race (W, N-W). White 60+ patients
/// dominate and non-white patients under 60 are scarce; prevalence spans
/// 0.266 to 0.769, with the interior cells interpolated.
pub fn named_spec(name: &str) -> Result<CohortSpec> {
    let sg = |k: &[&str], n: usize, prevalence: f64, separation: f64| SubgroupSpec {
        key: key(k),
        n,
        prevalence,
        separation,
        tilt: 0.0,
    };
    match name {
        "derm6" => Ok(CohortSpec {
            attributes: vec!["age_bin".into(), "gender".into()],
            subgroups: vec![
                sg(&["0-40", "female"], 134, 0.063, 3.0),
                sg(&["41-60", "female"], 277, 0.120, 3.0),
                sg(&["60+", "female"], 150, 0.270, 3.0),
                sg(&["0-40", "male"], 100, 0.080, 3.0),
                sg(&["41-60", "male"], 250, 0.159, 3.0),
                SubgroupSpec { tilt: 0.7, ..sg(&["60+", "male"], 289, 0.377, 2.5) },
            ],
            d_in: 16,
            noise_sigma: 1.0,
            appearance_shift: 1.0,
            seed: 7,
        }),
        "oph8" => Ok(CohortSpec {
            attributes: vec!["age_bin".into(), "gender".into(), "race".into()],
            subgroups: vec![
                sg(&["0-60", "female", "N-W"], 31, 0.394, 1.0),
                sg(&["0-60", "female", "W"], 112, 0.343, 1.2),
                sg(&["0-60", "male", "N-W"], 19, 0.266, 1.0),
                sg(&["0-60", "male", "W"], 212, 0.377, 1.2),
                sg(&["60+", "female", "N-W"], 136, 0.496, 1.4),
                sg(&["60+", "female", "W"], 322, 0.447, 1.6),
                sg(&["60+", "male", "N-W"], 115, 0.769, 1.4),
                sg(&["60+", "male", "W"], 253, 0.479, 1.6),
            ],
            d_in: 16,
            noise_sigma: 1.0,
            appearance_shift: 1.0,
            seed: 11,
        }),
        other => Err(Error::UnknownSpec(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_group(n: usize, prevalence: f64, separation: f64) -> CohortSpec {
        CohortSpec {
            attributes: vec!["g".into()],
            subgroups: vec![SubgroupSpec {
                key: key(&["a"]),
                n,
                prevalence,
                separation,
                tilt: 0.0,
            }],
            d_in: 4,
            noise_sigma: 1.0,
            appearance_shift: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn prevalence_rounding() {
        let pos = |spec: &CohortSpec| generate(spec).unwrap().iter().filter(|r| r.label == 1).count();
        assert_eq!(pos(&one_group(100, 0.0, 1.0)), 0);
        assert_eq!(pos(&one_group(100, 0.37, 1.0)), 37);
        assert_eq!(positive_count(10, 0.25), 3);
        assert_eq!(positive_count(10, 0.35), 4);
        assert_eq!(positive_count(3, 1.0), 3);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = named_spec("derm6").unwrap();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn draws_share_geometry_not_noise() {
        let spec = one_group(2000, 0.5, 4.0);
        let a = generate_draw(&spec, 0).unwrap();
        let b = generate_draw(&spec, 1).unwrap();
        assert_ne!(a, b);
        // class means agree across draws
        let mean = |recs: &[SampleRecord], label: usize, d: usize| {
            let v: Vec<f64> = recs.iter().filter(|r| r.label == label).map(|r| r.features[d]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        for d in 1..4 {
            assert!((mean(&a, 1, d) - mean(&b, 1, d)).abs() < 0.15);
        }
    }

    #[test]
    fn empty_spec_is_rejected() {
        let mut spec = one_group(0, 0.5, 1.0);
        assert!(matches!(generate(&spec), Err(Error::Empty(_))));
        spec.subgroups.clear();
        assert!(matches!(generate(&spec), Err(Error::Empty(_))));
    }

    #[test]
    fn bad_prevalence_names_field() {
        let mut spec = named_spec("derm6").unwrap();
        spec.subgroups[2].prevalence = 1.2;
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("subgroups[2].prevalence"), "{err}");
    }

    #[test]
    fn shaped_specs() {
        let derm = named_spec("derm6").unwrap();
        assert_eq!(derm.subgroups.len(), 6);
        assert_eq!(derm.total(), 1200);
        let prev: Vec<f64> = derm.subgroups.iter().map(|s| s.prevalence).collect();
        assert_eq!(prev.iter().copied().fold(f64::MIN, f64::max), 0.377);
        assert_eq!(prev.iter().copied().fold(f64::MAX, f64::min), 0.063);
        // the 60+ male cell is the largest
        let largest = derm.subgroups.iter().max_by_key(|s| s.n).unwrap();
        assert_eq!(largest.key, key(&["60+", "male"]));

        let oph = named_spec("oph8").unwrap();
        assert_eq!(oph.subgroups.len(), 8);
        assert_eq!(oph.total(), 1200);
        let prev: Vec<f64> = oph.subgroups.iter().map(|s| s.prevalence).collect();
        assert_eq!(prev.iter().copied().fold(f64::MIN, f64::max), 0.769);
        assert_eq!(prev.iter().copied().fold(f64::MAX, f64::min), 0.266);

        assert!(matches!(named_spec("nope"), Err(Error::UnknownSpec(_))));
        derm.validate().unwrap();
        oph.validate().unwrap();
    }

    #[test]
    fn split_ten_records() {
        let recs = generate(&one_group(10, 0.0, 1.0)).unwrap();
        let s = stratified_split(&recs, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    }

    #[test]
    fn split_seven_records_largest_remainder() {
        let recs = generate(&one_group(7, 0.0, 1.0)).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let s = stratified_split(&recs, [0.6, 0.2, 0.2], seed).unwrap();
            let sizes = (s.train.len(), s.val.len(), s.test.len());
            assert!([(5, 1, 1), (4, 2, 1), (4, 1, 2)].contains(&sizes), "{sizes:?}");
            assert_eq!(s, stratified_split(&recs, [0.6, 0.2, 0.2], seed).unwrap());
            seen.insert(sizes);
        }
        // 7 * (0.6, 0.2, 0.2) leaves remainders (0.2, 0.4, 0.4): val and test tie.
        assert!(seen.contains(&(4, 2, 1)) && seen.contains(&(4, 1, 2)));
    }

    #[test]
    fn bad_fractions() {
        let recs = generate(&one_group(5, 0.0, 1.0)).unwrap();
        assert!(matches!(
            stratified_split(&recs, [0.5, 0.2, 0.2], 0),
            Err(Error::BadFractions(_))
        ));
        assert!(matches!(
            stratified_split(&recs, [1.2, -0.1, -0.1], 0),
            Err(Error::BadFractions(_))
        ));
    }

    /// Mann-Whitney AUC by pairwise enumeration, kept local to this test.
    fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in pos {
            for n in neg {
                s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn separation_controls_single_feature_auc() {
        let auc_for = |sep: f64| {
            let mut spec = one_group(400, 0.5, sep);
            spec.d_in = 2;
            let recs = generate(&spec).unwrap();
            // with one free dimension the disease direction is +-e1
            let proj: Vec<(f64, usize)> = recs.iter().map(|r| (r.features[1], r.label)).collect();
            let pos: Vec<f64> = proj.iter().filter(|p| p.1 == 1).map(|p| p.0).collect();
            let neg: Vec<f64> = proj.iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
            let a = pairwise_auc(&pos, &neg);
            a.max(1.0 - a)
        };
        assert!(auc_for(3.0) > auc_for(0.5));
    }

    proptest! {
        #[test]
        fn split_is_a_partition_within_one_record(seed in 0u64..500, n in 1usize..60, prev in 0.0f64..1.0) {
            let recs = generate(&one_group(n, prev, 1.0)).unwrap();
            let s = stratified_split(&recs, [0.6, 0.2, 0.2], seed).unwrap();
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), recs.len());
            let mut ids: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.test).map(|r| r.id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), recs.len());
            for label in [0, 1] {
                let cell = recs.iter().filter(|r| r.label == label).count() as f64;
                for (part, f) in [(&s.train, 0.6), (&s.val, 0.2), (&s.test, 0.2)] {
                    let got = part.iter().filter(|r| r.label == label).count() as f64;
                    prop_assert!((got - cell * f).abs() < 1.0);
                }
            }
        }
    }
}
