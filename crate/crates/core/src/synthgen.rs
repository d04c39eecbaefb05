//! Synthetic hiring data with a known generating graph.
//!
//! Exogenous: Gender (skewed male), Race, Age, and a latent aptitude that is
//! not emitted. Aptitude drives SAT score and GPA, SAT drives College rank,
//! Age drives Work experience, Gender drives Major, and Job is a logistic
//! function of Gender, Major, Work experience, College rank, GPA and,
//! weakly, Race.

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{ColumnData, ColumnSpec, Dataset};

pub const RACES: [&str; 4] = ["Asian", "Black", "Hispanic", "White"];
pub const MAJORS: [&str; 3] = ["Business", "Computer Science", "Humanities"];
pub const GPA_LEVELS: [&str; 3] = ["High", "Low", "Medium"];
pub const COLLEGE_RANKS: [&str; 3] = ["Average", "Elite", "Good"];

/// Generating coefficients. The defaults are frozen; changing them changes
/// every derived number in the tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiringCoefficients {
    pub race_weights: [f64; 4],
    pub age_range: [f64; 2],
    /// Work experience = slope · (Age − age_range[0]) + N(0, noise²), floored at 0.
    pub work_exp_slope: f64,
    pub work_exp_noise: f64,
    pub sat_mean: f64,
    pub sat_aptitude: f64,
    pub sat_noise: f64,
    /// GPA score = aptitude · weight + N(0, noise²), cut at ±cut.
    pub gpa_aptitude: f64,
    pub gpa_noise: f64,
    pub gpa_cut: f64,
    pub college_noise: f64,
    /// Standardized-SAT cut points for Good and Elite.
    pub college_cuts: [f64; 2],
    /// Major logits against Humanities: (intercept, male shift) for
    /// Business and Computer Science.
    pub major_business: [f64; 2],
    pub major_cs: [f64; 2],
    pub job_intercept: f64,
    pub job_male: f64,
    pub job_business: f64,
    pub job_cs: f64,
    pub job_work_exp: f64,
    pub job_college_good: f64,
    pub job_college_elite: f64,
    pub job_gpa_medium: f64,
    pub job_gpa_high: f64,
    pub job_white: f64,
}

impl Default for HiringCoefficients {
    fn default() -> Self {
        HiringCoefficients {
            race_weights: [0.10, 0.15, 0.15, 0.60],
            age_range: [22.0, 60.0],
            work_exp_slope: 0.4,
            work_exp_noise: 2.0,
            sat_mean: 1050.0,
            sat_aptitude: 160.0,
            sat_noise: 70.0,
            gpa_aptitude: 0.9,
            gpa_noise: 0.55,
            gpa_cut: 0.55,
            college_noise: 0.6,
            college_cuts: [-0.2, 1.0],
            major_business: [2.10, 0.42],
            major_cs: [-0.16, 2.05],
            job_intercept: -6.0,
            job_male: 2.5,
            job_business: 0.5,
            job_cs: 0.5,
            job_work_exp: 0.25,
            job_college_good: 0.9,
            job_college_elite: 2.0,
            job_gpa_medium: 0.7,
            job_gpa_high: 1.6,
            job_white: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Probability that a row is male.
    pub p_male: f64,
    #[serde(default)]
    pub coefficients: HiringCoefficients,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 4000,
            seed: 0,
            p_male: 0.6,
            coefficients: HiringCoefficients::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::Config(format!("n must be at least 100, got {}", self.n)));
        }
        if !(self.p_male > 0.0 && self.p_male < 1.0) {
            return Err(Error::Config(format!("p_male must lie in (0, 1), got {}", self.p_male)));
        }
        let c = &self.coefficients;
        if c.race_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("race weights must be positive".into()));
        }
        if !(c.age_range[0] < c.age_range[1]) {
            return Err(Error::Config("age range is empty".into()));
        }
        Ok(())
    }
}

/// Column order of the generated dataset.
pub const COLUMNS: [&str; 9] = [
    "Gender",
    "Race",
    "Age",
    "Work experience",
    "SAT score",
    "Grade point average",
    "College rank",
    "Major",
    "Job",
];

/// Observed edges of the generating graph (the latent aptitude's two
/// effects are not edges between observed columns).
pub fn hiring_edges() -> Vec<(&'static str, &'static str)> {
    vec![
        ("Age", "Work experience"),
        ("SAT score", "College rank"),
        ("Gender", "Major"),
        ("Gender", "Job"),
        ("Major", "Job"),
        ("Work experience", "Job"),
        ("College rank", "Job"),
        ("Grade point average", "Job"),
        ("Race", "Job"),
    ]
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw the hiring dataset. Job levels are `N`/`Y` with `Y` favorable.
pub fn generate_hiring(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let c = &cfg.coefficients;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let race_dist = WeightedIndex::new(c.race_weights).map_err(|e| Error::Config(e.to_string()))?;
    let n = cfg.n;
    let mut gender = Vec::with_capacity(n);
    let mut race = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut work = Vec::with_capacity(n);
    let mut sat = Vec::with_capacity(n);
    let mut gpa = Vec::with_capacity(n);
    let mut college = Vec::with_capacity(n);
    let mut major = Vec::with_capacity(n);
    let mut job = Vec::with_capacity(n);

    for _ in 0..n {
        let male = rng.gen_bool(cfg.p_male);
        let r = race_dist.sample(&mut rng) as u32;
        let a = rng.gen_range(c.age_range[0]..=c.age_range[1]).round();
        let aptitude = normal(&mut rng);

        let w = (c.work_exp_slope * (a - c.age_range[0]) + c.work_exp_noise * normal(&mut rng)).max(0.0);
        let w = (w * 10.0).round() / 10.0;
        let s = (c.sat_mean + c.sat_aptitude * aptitude + c.sat_noise * normal(&mut rng))
            .clamp(400.0, 1600.0)
            .round();
        let g_score = c.gpa_aptitude * aptitude + c.gpa_noise * normal(&mut rng);
        let g = if g_score > c.gpa_cut {
            0
        } else if g_score < -c.gpa_cut {
            1
        } else {
            2
        };
        let sat_z = (s - c.sat_mean) / (c.sat_aptitude.powi(2) + c.sat_noise.powi(2)).sqrt();
        let col_score = sat_z + c.college_noise * normal(&mut rng);
        let col = if col_score > c.college_cuts[1] {
            1
        } else if col_score > c.college_cuts[0] {
            2
        } else {
            0
        };
        let m = f64::from(u8::from(male));
        let logits = [
            c.major_business[0] + c.major_business[1] * m,
            c.major_cs[0] + c.major_cs[1] * m,
            0.0,
        ];
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let maj = WeightedIndex::new(&weights).expect("positive weights").sample(&mut rng) as u32;

        let eta = c.job_intercept
            + c.job_male * m
            + match maj {
                0 => c.job_business,
                1 => c.job_cs,
                _ => 0.0,
            }
            + c.job_work_exp * w
            + match col {
                1 => c.job_college_elite,
                2 => c.job_college_good,
                _ => 0.0,
            }
            + match g {
                0 => c.job_gpa_high,
                2 => c.job_gpa_medium,
                _ => 0.0,
            }
            + if r == 3 { c.job_white } else { 0.0 };
        let hired = rng.gen_bool(sigmoid(eta));

        gender.push(u32::from(male));
        race.push(r);
        age.push(a);
        work.push(w);
        sat.push(s);
        gpa.push(g);
        college.push(col);
        major.push(maj);
        job.push(u32::from(hired));
    }

    let mut data = Dataset::new(
        "synthetic_hiring",
        vec![
            ColumnSpec::nominal("Gender", ["Female", "Male"]),
            ColumnSpec::nominal("Race", RACES),
            ColumnSpec::numeric("Age"),
            ColumnSpec::numeric("Work experience"),
            ColumnSpec::numeric("SAT score"),
            ColumnSpec::nominal("Grade point average", GPA_LEVELS),
            ColumnSpec::nominal("College rank", COLLEGE_RANKS),
            ColumnSpec::nominal("Major", MAJORS),
            ColumnSpec::nominal("Job", ["N", "Y"]),
        ],
        vec![
            ColumnData::Nominal(gender),
            ColumnData::Nominal(race),
            ColumnData::Numeric(age),
            ColumnData::Numeric(work),
            ColumnData::Numeric(sat),
            ColumnData::Nominal(gpa),
            ColumnData::Nominal(college),
            ColumnData::Nominal(major),
            ColumnData::Nominal(job),
        ],
    )?;
    data.set_label("Job", Some("Y"))?;
    Ok(data)
}
