//! Experiment configuration: one strict JSON schema shared by every verb.
//!
//! Unknown keys are rejected at parse time so a typo cannot silently
//! reconfigure a sweep. Semantic checks live in [`ExperimentConfig::validate`]
//! and reject anything a downstream module would refuse, with the offending
//! field named in the message.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rankscope_core::data::{BasisMode, SPolicy};
use rankscope_core::train::{
    doubling_schedule, geometric_schedule, growth_schedule, CheckpointSpec, Integrator,
    TestLossMode, TrainConfig,
};

/// Splits the default init-seed stream away from the data stream when only a
/// base seed is given.
pub const INIT_SALT: u64 = 0x517e_5eed_0000_0001;
/// Splits the border-noise stream away from the fixture stream in mnist-prep.
pub const PAD_SALT: u64 = 0x6e01_5e00_0000_0002;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub mnist: Option<MnistSection>,
    /// Default output directory; the --out flag takes precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Patch dimension.
    pub d: usize,
    /// Basis vectors per class.
    pub k: usize,
    /// Patches per sample.
    pub p: usize,
    /// Samples per dataset.
    pub n: usize,
    /// Background-noise scales; gen-data uses the first entry, sweep runs all.
    pub sigma_grid: Vec<f64>,
    #[serde(default = "default_s_policy")]
    pub s_policy: SPolicy,
    #[serde(default = "default_basis_mode")]
    pub basis_mode: BasisMode,
}

fn default_s_policy() -> SPolicy {
    SPolicy::FixedSize { s: 1 }
}

fn default_basis_mode() -> BasisMode {
    BasisMode::OneHot
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Filters per class bank.
    pub m: usize,
    /// Activation exponent, >= 3.
    pub q: u32,
    /// Huberization threshold.
    pub kappa: f64,
    /// Init scale of the Gaussian filter entries.
    pub sigma0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub eta: f64,
    /// Step budget; 0 logs the initial state only.
    pub steps: u64,
    /// Stop at the first logged step at or below this training loss.
    #[serde(default)]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub test_loss: TestLossMode,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
}

fn default_n_test() -> usize {
    200
}

/// Which steps get logged. All variants include step 0 and the final step
/// except `explicit`, which is taken verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum ScheduleSpec {
    /// Doubling points plus 3*2^i fill-in; at least five points per decade,
    /// which the growth and loss-rate fits need.
    #[default]
    Mixed,
    Doubling,
    Geometric {
        points: usize,
    },
    Explicit {
        steps: Vec<u64>,
    },
}

impl ScheduleSpec {
    pub fn build(&self, steps: u64) -> Vec<u64> {
        match self {
            ScheduleSpec::Mixed => growth_schedule(steps),
            ScheduleSpec::Doubling => doubling_schedule(steps),
            ScheduleSpec::Geometric { points } => geometric_schedule(steps, *points),
            ScheduleSpec::Explicit { steps } => steps.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    #[serde(default)]
    pub base: u64,
    /// Independent repeats per sigma in a sweep.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Overrides the data stream; defaults to the base seed.
    #[serde(default)]
    pub data_seed: Option<u64>,
    /// Overrides the init stream; defaults to base ^ INIT_SALT.
    #[serde(default)]
    pub init_seed: Option<u64>,
}

fn default_repeats() -> usize {
    1
}

impl Default for SeedSection {
    fn default() -> Self {
        SeedSection {
            base: 0,
            repeats: 1,
            data_seed: None,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSection {
    /// IDX image file (decompressed). Absent: the built-in drawn fixture.
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// The two digit labels mapped to the positive and negative class.
    #[serde(default = "default_classes")]
    pub classes: (u8, u8),
    #[serde(default = "default_pca_rank")]
    pub pca_rank: usize,
    /// Subtract per-pixel means before the reduction.
    #[serde(default = "default_center")]
    pub center: bool,
    /// Noise border width in pixels on each side.
    #[serde(default = "default_pad")]
    pub pad: usize,
    /// Scale of the border noise.
    #[serde(default)]
    pub pad_sigma: f64,
    /// Patch grid over the padded image.
    #[serde(default = "default_grid")]
    pub grid: (usize, usize),
    /// Fixture size when no IDX files are given.
    #[serde(default = "default_fixture_count")]
    pub fixture_count: usize,
}

fn default_classes() -> (u8, u8) {
    (0, 1)
}

fn default_pca_rank() -> usize {
    10
}

fn default_center() -> bool {
    true
}

fn default_pad() -> usize {
    14
}

fn default_grid() -> (usize, usize) {
    (2, 2)
}

fn default_fixture_count() -> usize {
    200
}

impl Default for MnistSection {
    fn default() -> Self {
        MnistSection {
            images: None,
            labels: None,
            classes: default_classes(),
            pca_rank: default_pca_rank(),
            center: default_center(),
            pad: default_pad(),
            pad_sigma: 0.0,
            grid: default_grid(),
            fixture_count: default_fixture_count(),
        }
    }
}

/// Fully resolved seeds for one run. The basis seed carries no repeat offset:
/// repeats share the basis and differ in sampling and init only. The data
/// seed carries no sigma dependence either, so sweep runs at different noise
/// levels see common random numbers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunSeeds {
    pub base: u64,
    pub basis_seed: u64,
    pub data_seed: u64,
    pub init_seed: u64,
    pub repeat: usize,
}

impl ExperimentConfig {
    pub fn resolve_seeds(&self, override_base: Option<u64>, repeat: usize) -> RunSeeds {
        let base = override_base.unwrap_or(self.seeds.base);
        let data_base = self.seeds.data_seed.unwrap_or(base);
        let init_base = self.seeds.init_seed.unwrap_or(base ^ INIT_SALT);
        RunSeeds {
            base,
            basis_seed: data_base,
            data_seed: data_base.wrapping_add(repeat as u64),
            init_seed: init_base.wrapping_add(repeat as u64),
            repeat,
        }
    }

    /// Core training config for one run. The threshold ratio is a flag, not a
    /// config field, so it arrives separately.
    pub fn to_train_config(
        &self,
        seeds: &RunSeeds,
        threshold_ratio: f64,
        checkpoint_at: Option<CheckpointSpec>,
    ) -> TrainConfig {
        TrainConfig {
            eta: self.training.eta,
            sigma0: self.model.sigma0,
            steps: self.training.steps,
            log_schedule: self.training.schedule.build(self.training.steps),
            seed: seeds.init_seed,
            target_loss: self.training.target_loss,
            threshold_ratio,
            integrator: self.training.integrator,
            test_loss: self.training.test_loss,
            n_test: self.training.n_test,
            checkpoint_at,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = &self.data;
        if d.d == 0 {
            return Err("data.d must be at least 1".into());
        }
        if d.k == 0 {
            return Err("data.k must be at least 1".into());
        }
        if 2 * d.k > d.d {
            return Err(format!(
                "data.d = {} cannot hold two disjoint sets of k = {} basis vectors",
                d.d, d.k
            ));
        }
        if d.n == 0 {
            return Err("data.n must be at least 1".into());
        }
        if d.p < 2 || d.p > 30 {
            return Err(format!("data.p must lie in [2, 30], got {}", d.p));
        }
        if let SPolicy::FixedSize { s } = d.s_policy {
            if s == 0 || s >= d.p {
                return Err(format!(
                    "data.s_policy size s = {s} must satisfy 1 <= s < p = {}",
                    d.p
                ));
            }
        }
        if d.sigma_grid.is_empty() {
            return Err("data.sigma_grid must be nonempty".into());
        }
        for &s in &d.sigma_grid {
            if !s.is_finite() || s < 0.0 {
                return Err(format!("data.sigma_grid entries must be finite and >= 0, got {s}"));
            }
        }

        let m = &self.model;
        if m.m == 0 {
            return Err("model.m must be at least 1".into());
        }
        if m.m < d.k {
            return Err(format!(
                "model.m = {} cannot cover data.k = {} basis vectors per class",
                m.m, d.k
            ));
        }
        if m.q < 3 {
            return Err(format!("model.q must be at least 3, got {}", m.q));
        }
        if !(m.kappa > 0.0) || !m.kappa.is_finite() {
            return Err("model.kappa must be positive and finite".into());
        }
        if !(m.sigma0 > 0.0) || !m.sigma0.is_finite() {
            return Err("model.sigma0 must be positive and finite".into());
        }

        let t = &self.training;
        if !(t.eta > 0.0) || !t.eta.is_finite() {
            return Err("training.eta must be positive and finite".into());
        }
        if let Some(tl) = t.target_loss {
            if !(tl > 0.0) || !tl.is_finite() {
                return Err("training.target_loss must be positive and finite".into());
            }
        }
        if t.n_test == 0 {
            return Err("training.n_test must be at least 1".into());
        }
        match &t.schedule {
            ScheduleSpec::Geometric { points } if *points < 2 => {
                return Err("training.schedule geometric points must be at least 2".into());
            }
            ScheduleSpec::Explicit { steps } => {
                if steps.is_empty() {
                    return Err("training.schedule explicit steps must be nonempty".into());
                }
                if !steps.windows(2).all(|w| w[0] < w[1]) {
                    return Err("training.schedule explicit steps must be strictly increasing".into());
                }
                if *steps.last().unwrap() > t.steps {
                    return Err(format!(
                        "training.schedule last explicit step {} exceeds training.steps = {}",
                        steps.last().unwrap(),
                        t.steps
                    ));
                }
            }
            _ => {}
        }

        if self.seeds.repeats == 0 {
            return Err("seeds.repeats must be at least 1".into());
        }

        if let Some(mn) = &self.mnist {
            if mn.classes.0 == mn.classes.1 {
                return Err(format!("mnist.classes must differ, got {}", mn.classes.0));
            }
            if mn.classes.0 > 9 || mn.classes.1 > 9 {
                return Err("mnist.classes must be digit labels 0..=9".into());
            }
            if mn.pca_rank == 0 {
                return Err("mnist.pca_rank must be at least 1".into());
            }
            if mn.grid.0 == 0 || mn.grid.1 == 0 {
                return Err("mnist.grid sides must be at least 1".into());
            }
            if !mn.pad_sigma.is_finite() || mn.pad_sigma < 0.0 {
                return Err("mnist.pad_sigma must be finite and >= 0".into());
            }
            if mn.images.is_some() != mn.labels.is_some() {
                return Err("mnist.images and mnist.labels must be given together".into());
            }
            if mn.images.is_none() && mn.fixture_count == 0 {
                return Err("mnist.fixture_count must be at least 1".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "data": {"d": 50, "k": 2, "p": 3, "n": 20, "sigma_grid": [0.0]},
            "model": {"m": 4, "q": 3, "kappa": 0.1, "sigma0": 1e-3},
            "training": {"eta": 0.1, "steps": 8}
        })
    }

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, serde_json::Error> {
        serde_json::from_value(v)
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse(minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.data.s_policy, SPolicy::FixedSize { s: 1 });
        assert_eq!(cfg.data.basis_mode, BasisMode::OneHot);
        assert_eq!(cfg.training.schedule, ScheduleSpec::Mixed);
        assert_eq!(cfg.training.n_test, 200);
        assert_eq!(cfg.seeds.base, 0);
        assert_eq!(cfg.seeds.repeats, 1);
        assert!(cfg.mnist.is_none());
        assert!(cfg.out_dir.is_none());
    }

    #[test]
    fn unknown_field_is_rejected_with_its_name() {
        let mut v = minimal_json();
        v["data"]["dd"] = serde_json::json!(3);
        let err = parse(v).unwrap_err().to_string();
        assert!(err.contains("dd"), "message should name the field: {err}");

        let mut v = minimal_json();
        v["typo_section"] = serde_json::json!({});
        let err = parse(v).unwrap_err().to_string();
        assert!(err.contains("typo_section"), "{err}");
    }

    #[test]
    fn missing_field_is_rejected_with_its_name() {
        let mut v = minimal_json();
        v["training"].as_object_mut().unwrap().remove("steps");
        let err = parse(v).unwrap_err().to_string();
        assert!(err.contains("steps"), "{err}");
    }

    #[test]
    fn validate_names_the_offending_field() {
        let cases: Vec<(serde_json::Value, &str)> = vec![
            {
                let mut v = minimal_json();
                v["data"]["sigma_grid"] = serde_json::json!([]);
                (v, "sigma_grid")
            },
            {
                let mut v = minimal_json();
                v["data"]["k"] = serde_json::json!(30);
                (v, "data.d")
            },
            {
                let mut v = minimal_json();
                v["model"]["q"] = serde_json::json!(2);
                (v, "model.q")
            },
            {
                let mut v = minimal_json();
                v["training"]["eta"] = serde_json::json!(0.0);
                (v, "training.eta")
            },
            {
                let mut v = minimal_json();
                v["data"]["s_policy"] = serde_json::json!({"fixed-size": {"s": 3}});
                (v, "s_policy")
            },
            {
                let mut v = minimal_json();
                v["seeds"] = serde_json::json!({"repeats": 0});
                (v, "repeats")
            },
            {
                let mut v = minimal_json();
                v["mnist"] = serde_json::json!({"classes": [4, 4]});
                (v, "classes")
            },
        ];
        for (v, needle) in cases {
            let cfg = parse(v).unwrap();
            let err = cfg.validate().unwrap_err();
            assert!(err.contains(needle), "expected {needle:?} in {err:?}");
        }
    }

    #[test]
    fn explicit_schedule_bounds_checked() {
        let mut v = minimal_json();
        v["training"]["schedule"] = serde_json::json!({"explicit": {"steps": [0, 4, 9]}});
        let cfg = parse(v).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.contains("exceeds"), "{err}");
    }

    #[test]
    fn schedule_variants_build_expected_shapes() {
        assert_eq!(ScheduleSpec::Mixed.build(0), vec![0]);
        assert_eq!(
            ScheduleSpec::Mixed.build(16),
            vec![0, 1, 2, 3, 4, 6, 8, 12, 16]
        );
        assert_eq!(ScheduleSpec::Doubling.build(16), vec![0, 1, 2, 4, 8, 16]);
        let g = ScheduleSpec::Geometric { points: 10 }.build(1000);
        assert_eq!(*g.first().unwrap(), 0);
        assert_eq!(*g.last().unwrap(), 1000);
        assert_eq!(
            ScheduleSpec::Explicit { steps: vec![0, 3, 7] }.build(8),
            vec![0, 3, 7]
        );
    }

    #[test]
    fn seed_derivation_rules() {
        let cfg = parse(minimal_json()).unwrap();

        // base-only config: data stream = base, init stream salted away
        let s0 = cfg.resolve_seeds(None, 0);
        assert_eq!(s0.data_seed, 0);
        assert_eq!(s0.basis_seed, 0);
        assert_eq!(s0.init_seed, INIT_SALT);

        // repeats offset both streams but never the basis
        let s2 = cfg.resolve_seeds(None, 2);
        assert_eq!(s2.data_seed, 2);
        assert_eq!(s2.init_seed, INIT_SALT.wrapping_add(2));
        assert_eq!(s2.basis_seed, s0.basis_seed);

        // the --seed flag overrides the config base
        let s = cfg.resolve_seeds(Some(7), 0);
        assert_eq!(s.base, 7);
        assert_eq!(s.data_seed, 7);
        assert_eq!(s.init_seed, 7 ^ INIT_SALT);

        // explicit stream seeds win over the base
        let mut v = minimal_json();
        v["seeds"] = serde_json::json!({"base": 1, "data_seed": 100, "init_seed": 200});
        let cfg = parse(v).unwrap();
        let s = cfg.resolve_seeds(Some(9), 1);
        assert_eq!(s.basis_seed, 100);
        assert_eq!(s.data_seed, 101);
        assert_eq!(s.init_seed, 201);
    }

    #[test]
    fn train_config_carries_schedule_and_seed() {
        let mut v = minimal_json();
        v["training"]["schedule"] = serde_json::json!("doubling");
        v["training"]["target_loss"] = serde_json::json!(0.05);
        let cfg = parse(v).unwrap();
        let seeds = cfg.resolve_seeds(Some(3), 0);
        let tc = cfg.to_train_config(&seeds, 0.02, None);
        tc.validate().unwrap();
        assert_eq!(tc.log_schedule, vec![0, 1, 2, 4, 8]);
        assert_eq!(tc.seed, seeds.init_seed);
        assert_eq!(tc.target_loss, Some(0.05));
        assert_eq!(tc.threshold_ratio, 0.02);
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut v = minimal_json();
        v["mnist"] = serde_json::json!({"pca_rank": 20});
        v["out_dir"] = serde_json::json!("runs/demo");
        let cfg = parse(v).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.mnist.as_ref().unwrap().pca_rank, 20);
        assert_eq!(back.mnist.as_ref().unwrap().pad, 14);
        assert_eq!(back.out_dir.as_deref(), Some(std::path::Path::new("runs/demo")));
    }
}
