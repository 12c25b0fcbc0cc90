//! Synthetic subgroup-annotated cohort generation and patient-wise
//! splitting. Category counts are met by quota (largest-remainder
//! apportionment plus seeded shuffles), so realized fractions track the
//! spec to ~1/N rather than binomial noise.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::labels::{
    binarize_labels, AgeBin, BinaryLabelVector, CardiomegalyGrade, Sex, SeverityGrade,
    StudyGrades, SubgroupKey,
};
use crate::DataError;

/// Fraction of patients carrying two studies instead of one.
const TWO_STUDY_PATIENT_RATE: f64 = 0.1;

/// Peak planted-signal amplitude in gray levels at separability 1, before
/// age and grade modulation.
const SIGNAL_SCALE: f64 = 42.0;

/// Background gray level and pixel-noise standard deviation.
const BACKGROUND_MEAN: f64 = 120.0;
const BACKGROUND_NOISE_STD: f64 = 18.0;

/// Per-label planted texture frequencies (cycles across the image width and
/// height). Distinct per label so the eight findings are separable.
const LABEL_FREQUENCIES: [(f64, f64); 8] = [
    (3.0, 0.0),
    (0.0, 3.0),
    (2.0, 2.0),
    (4.0, 1.0),
    (1.0, 4.0),
    (5.0, 0.0),
    (0.0, 5.0),
    (3.5, 3.5),
];

/// Signal-strength multiplier per age bin: younger patients get cleaner
/// (easier) images, mirroring the age-difficulty gradient.
const AGE_SIGNAL_MULTIPLIER: [f64; 5] = [1.25, 1.1, 1.0, 0.85, 0.7];

/// Everything the generator needs to produce a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_studies: usize,
    pub image_size: usize,
    pub female_fraction: f64,
    /// Fractions of the five age bins in [`AgeBin::ALL`] order; must sum to 1.
    pub age_bin_fractions: [f64; 5],
    /// Per-label positive fractions in [`crate::LABEL_NAMES`] order.
    pub label_prevalences: [f64; 8],
    /// 0 plants no signal (AUROC ≈ 0.5 ceiling); larger is easier.
    pub separability: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl CohortSpec {
    /// Cohort-statistics defaults scaled down to a desk-size run.
    pub fn standard(n_studies: usize, seed: u64) -> Self {
        Self {
            n_studies,
            image_size: 32,
            female_fraction: 0.3481,
            age_bin_fractions: [0.0282, 0.2723, 0.2427, 0.3197, 0.1371],
            label_prevalences: [0.4674, 0.0847, 0.0807, 0.0650, 0.1164, 0.0827, 0.0971, 0.0780],
            separability: 1.0,
            train_fraction: 0.794,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_studies == 0 {
            return Err(DataError::InvalidSpec("n_studies must be positive".into()));
        }
        if self.image_size < 8 {
            return Err(DataError::InvalidSpec(format!(
                "image_size {} below the minimum of 8",
                self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.female_fraction) {
            return Err(DataError::InvalidSpec(format!(
                "female_fraction {} outside [0, 1]",
                self.female_fraction
            )));
        }
        let age_sum: f64 = self.age_bin_fractions.iter().sum();
        if self.age_bin_fractions.iter().any(|&f| f < 0.0) || (age_sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSpec(format!(
                "age_bin_fractions must be nonnegative and sum to 1 (got {age_sum})"
            )));
        }
        for (i, &p) in self.label_prevalences.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(DataError::InvalidSpec(format!(
                    "label_prevalences[{i}] = {p} outside (0, 1)"
                )));
            }
        }
        if !(self.separability >= 0.0 && self.separability.is_finite()) {
            return Err(DataError::InvalidSpec(format!(
                "separability {} must be a finite nonnegative value",
                self.separability
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::InvalidSpec(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// One radiograph-like record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Study {
    pub patient_id: String,
    pub filename: String,
    pub image: GrayImage,
    pub age: u32,
    pub sex: Sex,
    pub grades: StudyGrades,
}

impl Study {
    pub fn labels(&self) -> BinaryLabelVector {
        binarize_labels(&self.grades)
    }

    pub fn subgroup(&self) -> Result<SubgroupKey, DataError> {
        Ok(SubgroupKey {
            age_bin: AgeBin::from_age(self.age)?,
            sex: self.sex,
            comorbidity_count: self.labels().count_positive(),
        })
    }
}

/// A generated or loaded dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub studies: Vec<Study>,
    pub image_size: usize,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    /// Fraction of studies positive for each label.
    pub fn label_prevalences(&self) -> [f64; 8] {
        let mut counts = [0usize; 8];
        for s in &self.studies {
            for (c, &b) in counts.iter_mut().zip(&s.labels().0) {
                *c += usize::from(b);
            }
        }
        counts.map(|c| c as f64 / self.studies.len() as f64)
    }
}

/// Largest-remainder apportionment of `total` into `weights.len()` integer
/// counts proportional to the weights.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

fn draw_cardiomegaly_grade<R: Rng>(positive: bool, rng: &mut R) -> CardiomegalyGrade {
    let u: f64 = rng.random_range(0.0..1.0);
    if positive {
        if u < 0.5 {
            CardiomegalyGrade::Borderline
        } else if u < 0.8 {
            CardiomegalyGrade::Enlarged
        } else {
            CardiomegalyGrade::MassivelyEnlarged
        }
    } else if u < 0.8 {
        CardiomegalyGrade::Normal
    } else {
        CardiomegalyGrade::Uncertain
    }
}

fn draw_severity_grade<R: Rng>(positive: bool, rng: &mut R) -> SeverityGrade {
    let u: f64 = rng.random_range(0.0..1.0);
    if positive {
        if u < 0.5 {
            SeverityGrade::Mild
        } else if u < 0.8 {
            SeverityGrade::Moderate
        } else {
            SeverityGrade::Severe
        }
    } else if u < 0.8 {
        SeverityGrade::Negative
    } else {
        SeverityGrade::Uncertain
    }
}

/// Renders one study image: noisy background plus one oriented sinusoidal
/// texture per positive finding. Phases are always drawn for all eight
/// labels so the pixel stream does not depend on the study's grades.
fn render_image(spec: &CohortSpec, study_idx: usize, age_bin: AgeBin, weights: [f64; 8]) -> GrayImage {
    let mut rng = rngutil::substream(spec.seed, "image", study_idx as u64);
    let phases: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..TAU)).collect();
    let age_mult = AGE_SIGNAL_MULTIPLIER[AgeBin::ALL.iter().position(|&b| b == age_bin).unwrap()];
    let s = spec.image_size;
    let mut data = Vec::with_capacity(s * s);
    for r in 0..s {
        for c in 0..s {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut v = BACKGROUND_MEAN + BACKGROUND_NOISE_STD * z;
            for l in 0..8 {
                let amp = spec.separability * age_mult * weights[l] * SIGNAL_SCALE;
                if amp > 0.0 {
                    let (fx, fy) = LABEL_FREQUENCIES[l];
                    let arg = TAU * (fx * c as f64 / s as f64 + fy * r as f64 / s as f64)
                        + phases[l];
                    v += amp * arg.sin();
                }
            }
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(s, s, data).expect("rendered image has the declared shape")
}

/// Generates the full cohort deterministically from the seed in `spec`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort, DataError> {
    spec.validate()?;
    let n = spec.n_studies;

    // Roster: which patients carry two studies.
    let mut roster_rng = rngutil::substream(spec.seed, "roster", 0);
    let mut patient_sizes = Vec::new();
    let mut assigned = 0usize;
    while assigned < n {
        let two = assigned + 2 <= n && roster_rng.random_bool(TWO_STUDY_PATIENT_RATE);
        let size = if two { 2 } else { 1 };
        patient_sizes.push(size);
        assigned += size;
    }
    let n_patients = patient_sizes.len();

    // Patient demographics by quota.
    let female_count = apportion(
        n_patients,
        &[spec.female_fraction, 1.0 - spec.female_fraction],
    )[0];
    let mut sexes = vec![Sex::Female; female_count];
    sexes.resize(n_patients, Sex::Male);
    sexes.shuffle(&mut rngutil::substream(spec.seed, "sex", 0));

    let bin_counts = apportion(n_patients, &spec.age_bin_fractions);
    let mut bins = Vec::with_capacity(n_patients);
    for (bin, count) in AgeBin::ALL.into_iter().zip(bin_counts) {
        bins.extend(std::iter::repeat_n(bin, count));
    }
    bins.shuffle(&mut rngutil::substream(spec.seed, "age-bin", 0));

    let mut age_rng = rngutil::substream(spec.seed, "age", 0);
    let ages: Vec<u32> = bins
        .iter()
        .map(|b| {
            let (lo, hi) = b.range();
            age_rng.random_range(lo..hi)
        })
        .collect();

    // Study-level label positivity by per-label quota.
    let mut positive = vec![[false; 8]; n];
    for l in 0..8 {
        let k = apportion(n, &[spec.label_prevalences[l], 1.0 - spec.label_prevalences[l]])[0];
        if k == 0 || k == n {
            return Err(DataError::InvalidSpec(format!(
                "label_prevalences[{l}] = {} unrealizable with both classes at N = {n}",
                spec.label_prevalences[l]
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rngutil::substream(spec.seed, "label", l as u64));
        for &study in order.iter().take(k) {
            positive[study][l] = true;
        }
    }

    // Study table rows (patient-major order).
    let mut patient_of_study = Vec::with_capacity(n);
    for (p, &size) in patient_sizes.iter().enumerate() {
        for _ in 0..size {
            patient_of_study.push(p);
        }
    }
    let mut grades_of_study = Vec::with_capacity(n);
    for (study, flags) in positive.iter().enumerate() {
        let mut rng = rngutil::substream(spec.seed, "grades", study as u64);
        grades_of_study.push(StudyGrades {
            cdm: draw_cardiomegaly_grade(flags[0], &mut rng),
            cng: draw_severity_grade(flags[1], &mut rng),
            per: draw_severity_grade(flags[2], &mut rng),
            pel: draw_severity_grade(flags[3], &mut rng),
            pir: draw_severity_grade(flags[4], &mut rng),
            pil: draw_severity_grade(flags[5], &mut rng),
            alr: draw_severity_grade(flags[6], &mut rng),
            all: draw_severity_grade(flags[7], &mut rng),
        });
    }

    let studies: Vec<Study> = (0..n)
        .into_par_iter()
        .map(|study| {
            let p = patient_of_study[study];
            let grades = grades_of_study[study];
            let image = render_image(spec, study, bins[p], grades.signal_weights());
            Study {
                patient_id: format!("p{p:05}"),
                filename: format!("s{study:06}.pgm"),
                image,
                age: ages[p],
                sex: sexes[p],
                grades,
            }
        })
        .collect();

    Ok(Cohort {
        studies,
        image_size: spec.image_size,
    })
}

/// Study-index partition with no patient crossing sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits patient-wise: patients are stratified by their studies' label
/// patterns, test quotas apportioned across strata, and members drawn by
/// seeded shuffle, so per-split label prevalence stays close to the whole
/// set while no patient appears in both splits.
pub fn split_patientwise(cohort: &Cohort, train_fraction: f64, seed: u64) -> SplitIndices {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train_fraction {train_fraction} outside (0, 1)"
    );
    // Patients in first-appearance order.
    let mut patient_pos: HashMap<&str, usize> = HashMap::new();
    let mut patients: Vec<Vec<usize>> = Vec::new();
    for (idx, study) in cohort.studies.iter().enumerate() {
        let pos = *patient_pos
            .entry(study.patient_id.as_str())
            .or_insert_with(|| {
                patients.push(Vec::new());
                patients.len() - 1
            });
        patients[pos].push(idx);
    }

    // Stratify by the multiset of per-study label bitmasks.
    let mut strata: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    for (pos, studies) in patients.iter().enumerate() {
        let mut key: Vec<u8> = studies
            .iter()
            .map(|&s| {
                cohort.studies[s]
                    .labels()
                    .0
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (l, &b)| acc | (u8::from(b) << l))
            })
            .collect();
        key.sort_unstable();
        strata.entry(key).or_default().push(pos);
    }

    // Apportion the test quota over strata by patient count.
    let test_fraction = 1.0 - train_fraction;
    let total_test = ((patients.len() as f64) * test_fraction).round() as usize;
    let sizes: Vec<f64> = strata.values().map(|v| v.len() as f64).collect();
    let mut quotas: Vec<usize> = sizes
        .iter()
        .map(|&k| (k * test_fraction).floor() as usize)
        .collect();
    let mut rema: Vec<(usize, f64)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| (i, k * test_fraction - (k * test_fraction).floor()))
        .collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let assigned: usize = quotas.iter().sum();
    for &(i, _) in rema.iter().take(total_test.saturating_sub(assigned)) {
        quotas[i] += 1;
    }

    let mut test = Vec::new();
    let mut train = Vec::new();
    for (stratum_idx, members) in strata.values().enumerate() {
        let mut members = members.clone();
        members.shuffle(&mut rngutil::substream(seed, "split", stratum_idx as u64));
        let quota = quotas[stratum_idx].min(members.len());
        for (rank, &pos) in members.iter().enumerate() {
            let side = if rank < quota { &mut test } else { &mut train };
            side.extend_from_slice(&patients[pos]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    SplitIndices { train, test }
}
