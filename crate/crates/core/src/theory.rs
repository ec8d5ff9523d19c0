//! Standalone numeric validators for the sequence lemmas behind the phase
//! analysis: growth sandwiches, first-passage bounds, tensor-power partial
//! sums, sequence comparison, and concentration bands for dataset counts.
//!
//! Every inequality is asserted with absolute slack 1e-9; the statements are
//! exact in real arithmetic, so the slack only absorbs accumulated rounding.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_basis, sample_dataset, BasisMode, PatchedDataset, Provenance, SPolicy};
use crate::error::{Error, Result};
use crate::spectral::spectrum_union_check;

pub const LEMMA_SLACK: f64 = 1e-9;

/// Rate schedule C_t for the power family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CtSchedule {
    Constant { c: f64 },
    /// Explicit per-step rates with recorded bounds C1 <= C_t <= C2.
    Explicit { values: Vec<f64>, lower: f64, upper: f64 },
}

impl CtSchedule {
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            CtSchedule::Constant { c } => (*c, *c),
            CtSchedule::Explicit { lower, upper, .. } => (*lower, *upper),
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        match self {
            CtSchedule::Constant { c } => *c,
            CtSchedule::Explicit { values, .. } => values[t],
        }
    }

    fn validate(&self, horizon: usize) -> Result<()> {
        match self {
            CtSchedule::Constant { c } => {
                if !c.is_finite() || *c < 0.0 {
                    return Err(Error::InvalidInput("rate must be finite and >= 0".into()));
                }
            }
            CtSchedule::Explicit { values, lower, upper } => {
                if values.len() < horizon {
                    return Err(Error::InvalidInput(format!(
                        "schedule has {} rates for horizon {horizon}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidInput("rates must be finite and >= 0".into()));
                }
                let (lo, hi) = values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                        (a.min(v), b.max(v))
                    });
                if !(*lower <= lo && hi <= *upper) {
                    return Err(Error::InvalidInput(
                        "recorded bounds do not contain the rates".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateFamily {
    /// x <- x + c1 * exp(-c2 * x)
    Exp { c1: f64, c2: f64 },
    /// x <- x + eta * C_t * x^(q-1)
    Power { eta: f64, q: u32, schedule: CtSchedule },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub x0: f64,
    pub family: UpdateFamily,
    /// Number of update steps; the iterate list has horizon + 1 entries.
    pub horizon: usize,
}

impl SequenceSpec {
    pub fn exp(x0: f64, c1: f64, c2: f64, horizon: usize) -> Self {
        SequenceSpec {
            x0,
            family: UpdateFamily::Exp { c1, c2 },
            horizon,
        }
    }

    pub fn power(x0: f64, eta: f64, q: u32, schedule: CtSchedule, horizon: usize) -> Self {
        SequenceSpec {
            x0,
            family: UpdateFamily::Power { eta, q, schedule },
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.family {
            // the growth lemma admits x0 = 0 (its own bound reproduces it),
            // so only the power family insists on strict positivity
            UpdateFamily::Exp { c1, c2 } => {
                if !(self.x0 >= 0.0) || !self.x0.is_finite() {
                    return Err(Error::InvalidInput("x0 must be finite and >= 0".into()));
                }
                if !(*c1 > 0.0) || !(*c2 > 0.0) || !c1.is_finite() || !c2.is_finite() {
                    return Err(Error::InvalidInput("c1, c2 must be positive".into()));
                }
            }
            UpdateFamily::Power { eta, q, schedule } => {
                if !(self.x0 > 0.0) || !self.x0.is_finite() {
                    return Err(Error::InvalidInput("x0 must be positive".into()));
                }
                if !(*eta > 0.0) || !eta.is_finite() {
                    return Err(Error::InvalidInput("eta must be positive".into()));
                }
                if *q < 3 {
                    return Err(Error::InvalidInput(format!(
                        "power family needs q >= 3, got {q}"
                    )));
                }
                schedule.validate(self.horizon)?;
            }
        }
        Ok(())
    }
}

fn apply_step(spec: &SequenceSpec, x: f64, t: usize) -> Result<f64> {
    let next = match &spec.family {
        UpdateFamily::Exp { c1, c2 } => x + c1 * (-c2 * x).exp(),
        UpdateFamily::Power { eta, q, schedule } => {
            x + eta * schedule.at(t) * x.powi(*q as i32 - 1)
        }
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Horizon { step: t as u64 + 1 })
    }
}

/// Exact forward iteration x_0..x_T in double precision.
pub fn iterate_sequence(spec: &SequenceSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut xs = Vec::with_capacity(spec.horizon + 1);
    let mut x = spec.x0;
    xs.push(x);
    for t in 0..spec.horizon {
        x = apply_step(spec, x, t)?;
        xs.push(x);
    }
    Ok(xs)
}

/// Prefix of the iteration: runs while `keep(last)` holds, so power
/// sequences that eventually overflow can still be analyzed up to a target.
fn iterate_while(spec: &SequenceSpec, keep: impl Fn(f64) -> bool) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut xs = Vec::new();
    let mut x = spec.x0;
    xs.push(x);
    let mut t = 0;
    while t < spec.horizon && keep(x) {
        x = apply_step(spec, x, t)?;
        xs.push(x);
        t += 1;
    }
    Ok(xs)
}

/// log(c1 c2 t + e^(c2 x0)) / c2, evaluated stably for large c2 x0.
fn exp_bound_log(c1: f64, c2: f64, x0: f64, t: f64) -> f64 {
    let a = c2 * x0;
    if a > 30.0 {
        (a + (c1 * c2 * t * (-a).exp()).ln_1p()) / c2
    } else {
        (c1 * c2 * t + a.exp()).ln() / c2
    }
}

fn exp_sandwich_violation(xs: &[f64], c1: f64, c2: f64, x0: f64) -> f64 {
    let gap = c1 * (-c2 * x0).exp();
    let mut worst = 0.0f64;
    for (t, &x) in xs.iter().enumerate() {
        let lower = exp_bound_log(c1, c2, x0, t as f64);
        worst = worst.max(lower - x).max(x - (lower + gap));
    }
    worst
}

/// Max violation of the closed-form sandwich around the exp-family iterates;
/// at most 1e-9 for a faithful integrator.
pub fn check_exp_sandwich(spec: &SequenceSpec) -> Result<f64> {
    let UpdateFamily::Exp { c1, c2 } = spec.family else {
        return Err(Error::InvalidInput("sandwich check needs the exp family".into()));
    };
    let xs = iterate_sequence(spec)?;
    Ok(exp_sandwich_violation(&xs, c1, c2, spec.x0))
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstPassageReport {
    /// First step with x_t >= v.
    pub t_v: u64,
    pub lower: f64,
    pub upper: f64,
    pub holds: bool,
}

fn first_passage_time(xs: &[f64], v: f64) -> Result<u64> {
    xs.iter()
        .position(|&x| x >= v)
        .map(|t| t as u64)
        .ok_or(Error::Horizon {
            step: xs.len() as u64 - 1,
        })
}

/// Empirical first-passage time against both closed-form bounds.
///
/// The stated upper bound's final simplification needs log(1+zeta) >= 1 and
/// v/x0 comfortably above 1+zeta; the suite keeps to that regime (zeta = 6,
/// v = 10 x0).
pub fn check_first_passage(spec: &SequenceSpec, v: f64, zeta: f64) -> Result<FirstPassageReport> {
    let UpdateFamily::Power { eta, q, ref schedule } = spec.family else {
        return Err(Error::InvalidInput("first passage needs the power family".into()));
    };
    if !(v > spec.x0) {
        return Err(Error::InvalidInput(format!(
            "target {v} must exceed x0 {}",
            spec.x0
        )));
    }
    if !(zeta > 0.0) {
        return Err(Error::InvalidInput("zeta must be positive".into()));
    }
    let (c1, c2) = schedule.bounds();
    if !(c1 > 0.0) {
        return Err(Error::InvalidInput("first passage needs C1 > 0".into()));
    }
    let xs = iterate_while(spec, |x| x < v)?;
    let t_v = first_passage_time(&xs, v)?;

    let z1 = 1.0 + zeta;
    let qe = q as i32;
    let x_pow = spec.x0.powi(qe - 2);
    let log_ratio = (v / spec.x0).ln();
    let lower = 1.0 / (z1.powi(qe - 1) * eta * c2 * x_pow) - log_ratio / z1.powi(qe - 2);
    let upper = z1 / (eta * c1 * x_pow) + z1.powi(qe - 1) * c2 * log_ratio / c1;
    let t = t_v as f64;
    Ok(FirstPassageReport {
        t_v,
        lower,
        upper,
        holds: t >= lower - LEMMA_SLACK && t <= upper + LEMMA_SLACK,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorPowerReport {
    /// sum of eta C_t over t > 0 with x_t <= (1+zeta)^k x0.
    pub sum: f64,
    pub upper: f64,
    pub lower: f64,
    /// First steps reaching each level (1+zeta)^g x0, g = 0..=k.
    pub crossings: Vec<u64>,
    pub upper_ok: bool,
    pub lower_ok: bool,
}

fn tensor_power_report(
    xs: &[f64],
    eta: f64,
    q: u32,
    schedule: &CtSchedule,
    x0: f64,
    k: usize,
    zeta: f64,
) -> Result<TensorPowerReport> {
    let z1 = 1.0 + zeta;
    let mut crossings = Vec::with_capacity(k + 1);
    for g in 0..=k {
        let level = z1.powi(g as i32) * x0;
        crossings.push(first_passage_time(xs, level)?);
    }

    // the sum ranges over t >= 1 by the lemma's statement; its proof
    // telescopes from t = 0, so this reading gives the bound an eta*C_0
    // handicap that fine-step instances absorb
    let cutoff = z1.powi(k as i32) * x0;
    let mut sum = 0.0;
    for (t, &x) in xs.iter().enumerate().skip(1) {
        if x > cutoff {
            break;
        }
        if t < xs.len() - 1 {
            sum += eta * schedule.at(t);
        }
    }

    let qe = q as i32;
    let decay = z1.powi(-(qe - 2));
    let geom = (1.0 - decay.powi(k as i32)) / (1.0 - decay);
    let x_pow = x0.powi(qe - 2);

    let mut upper_rates = 0.0;
    for g in 0..k {
        upper_rates += schedule.at(crossings[g + 1] as usize - 1);
    }
    let upper = zeta / x_pow * geom
        + eta * (z1.powi(qe - 1) * upper_rates + schedule.at(crossings[k] as usize));

    let mut lower_rates = 0.0;
    for g in 1..k {
        lower_rates += schedule.at(crossings[g] as usize - 1);
    }
    let lower = zeta / (x_pow * z1.powi(qe - 1)) * geom - eta / z1.powi(qe - 1) * lower_rates;

    Ok(TensorPowerReport {
        sum,
        upper,
        lower,
        crossings,
        upper_ok: sum <= upper + LEMMA_SLACK,
        lower_ok: sum >= lower - LEMMA_SLACK,
    })
}

/// Both partial-sum bounds for the power family at level k.
pub fn check_tensor_power_sums(
    spec: &SequenceSpec,
    k: usize,
    zeta: f64,
) -> Result<TensorPowerReport> {
    let UpdateFamily::Power { eta, q, ref schedule } = spec.family else {
        return Err(Error::InvalidInput("partial sums need the power family".into()));
    };
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidInput("zeta must lie in (0, 1)".into()));
    }
    let cutoff = (1.0 + zeta).powi(k as i32) * spec.x0;
    let xs = iterate_while(spec, |x| x <= cutoff)?;
    tensor_power_report(&xs, eta, q, schedule, spec.x0, k, zeta)
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceCompareReport {
    /// Head start c with x0 = (1+c) y0.
    pub c: f64,
    /// Operationalized admissibility (all hidden constants taken as 1).
    pub eta_limit: f64,
    pub eta_ok: bool,
    pub ratio_ok: bool,
    pub admissible: bool,
    pub t_x: u64,
    pub t_y: u64,
    /// T_x <= T_y; guaranteed only for admissible instances.
    pub ordered: bool,
}

/// Race two power sequences sharing a rate schedule. Asserting T_x <= T_y is
/// only sound when the lemma's smallness conditions hold; inadmissible
/// instances are reported without judgment.
#[allow(clippy::too_many_arguments)]
pub fn check_sequence_compare(
    x0: f64,
    y0: f64,
    schedule: &CtSchedule,
    q: u32,
    eta: f64,
    a_x: f64,
    a_y: f64,
    horizon: usize,
) -> Result<SequenceCompareReport> {
    if !(y0 > 0.0 && x0 > 0.0 && a_x > 0.0 && a_y > 0.0) {
        return Err(Error::InvalidInput("starts and targets must be positive".into()));
    }
    let spec_x = SequenceSpec::power(x0, eta, q, schedule.clone(), horizon);
    let spec_y = SequenceSpec::power(y0, eta, q, schedule.clone(), horizon);
    spec_x.validate()?;

    let c = x0 / y0 - 1.0;
    let (_, cbar) = schedule.bounds();
    let eta_limit = c / (cbar * y0.powi(q as i32 - 3) * a_y);
    let eta_ok = c > 0.0 && eta <= eta_limit;
    let ratio_ok = c > 0.0 && y0 / a_y <= c;
    let admissible = eta_ok && ratio_ok;

    let t_x = first_passage_time(&iterate_while(&spec_x, |x| x < a_x)?, a_x)?;
    let t_y = first_passage_time(&iterate_while(&spec_y, |x| x < a_y)?, a_y)?;
    Ok(SequenceCompareReport {
        c,
        eta_limit,
        eta_ok,
        ratio_ok,
        admissible,
        t_x,
        t_y,
        ordered: t_x <= t_y,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CountBandReport {
    pub trials: usize,
    pub delta: f64,
    /// Fraction of draws with |#{y=+1} - n/2| inside the label band.
    pub label_coverage: f64,
    /// Fraction of draws with every per-basis count inside the count band.
    pub count_coverage: f64,
    pub label_band: f64,
    pub count_band: f64,
    pub cell_mean: f64,
    /// Coverage floor 1 - 2 delta; assertion skipped when it is <= 0.
    pub threshold: f64,
    pub asserted: bool,
    pub label_pass: bool,
    pub count_pass: bool,
}

/// Monte-Carlo coverage of the Hoeffding bands for label balance and
/// per-basis object-patch counts, over fresh datasets shaped like `template`.
pub fn check_count_bands(
    template: &PatchedDataset,
    delta: f64,
    trials: usize,
) -> Result<CountBandReport> {
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidInput("delta must be positive".into()));
    }
    let Provenance::Synthetic { policy, .. } = template.provenance else {
        return Err(Error::InvalidInput(
            "count bands need a resampleable synthetic template".into(),
        ));
    };
    let (n, p, k) = (template.n, template.p, template.k);
    let nf = n as f64;
    // the count distribution never depends on the basis vectors themselves
    let basis = make_basis(template.d, k, BasisMode::OneHot, 0)?;

    let log_term = (2.0 / delta).ln().max(0.0);
    let label_band = (nf * log_term / 2.0).sqrt();
    let count_band = (nf * log_term).sqrt();
    let expected_s = match policy {
        SPolicy::FixedSize { s } => s as f64,
        // uniform over nonempty proper subsets has mean size exactly P/2
        SPolicy::UniformNonemptyProper => p as f64 / 2.0,
    };
    let cell_mean = nf * expected_s / (2 * k) as f64;

    let mut label_hits = 0usize;
    let mut count_hits = 0usize;
    for trial in 0..trials {
        let seed = 0x00c0_0000u64 + trial as u64;
        let ds = sample_dataset(&basis, n, p, policy, template.sigma_noise, seed)?;
        let plus = ds.labels.iter().filter(|l| l.sign() > 0.0).count() as f64;
        if (plus - nf / 2.0).abs() <= label_band {
            label_hits += 1;
        }
        let ok = ds
            .basis_counts()
            .iter()
            .all(|&cnt| (cnt as f64 - cell_mean).abs() <= count_band);
        if ok {
            count_hits += 1;
        }
    }

    let label_coverage = label_hits as f64 / trials as f64;
    let count_coverage = count_hits as f64 / trials as f64;
    let threshold = 1.0 - 2.0 * delta;
    let asserted = threshold > 0.0;
    Ok(CountBandReport {
        trials,
        delta,
        label_coverage,
        count_coverage,
        label_band,
        count_band,
        cell_mean,
        threshold,
        asserted,
        label_pass: !asserted || label_coverage >= threshold,
        count_pass: !asserted || count_coverage >= threshold,
    })
}

// ---------------------------------------------------------------------------
// lemma suite

#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheckSummary {
    pub lemma: String,
    pub instances: usize,
    pub violations: usize,
    /// Largest observed violation magnitude, 0 when clean.
    pub worst: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaSuiteReport {
    pub checks: Vec<LemmaCheckSummary>,
    pub all_ok: bool,
}

impl LemmaSuiteReport {
    pub fn violated_lemmas(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.violations > 0)
            .map(|c| c.lemma.as_str())
            .collect()
    }
}

/// Fixed-seed validation suite across every lemma family.
pub fn run_lemma_suite() -> Result<LemmaSuiteReport> {
    suite_with_drift(0.0)
}

/// Negative control: re-run the suite on iterates corrupted by a linear
/// drift. A nonzero drift must surface violations, proving the suite can
/// detect a broken integrator.
pub fn run_lemma_suite_corrupted(drift: f64) -> Result<LemmaSuiteReport> {
    suite_with_drift(drift)
}

fn drifted(xs: &[f64], drift: f64) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(t, &x)| x + drift * t as f64)
        .collect()
}

fn suite_with_drift(drift: f64) -> Result<LemmaSuiteReport> {
    let mut checks = Vec::new();

    // growth sandwich: pinned examples plus randomized parameters
    {
        let mut specs = vec![
            SequenceSpec::exp(0.0, 1.0, 1.0, 100_000),
            SequenceSpec::exp(3.0, 0.5, 2.0, 10_000),
            SequenceSpec::exp(1.0, 1.0, 1.0, 2),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..20 {
            specs.push(SequenceSpec::exp(
                rng.gen_range(0.0..2.0),
                rng.gen_range(0.1..2.0),
                rng.gen_range(0.3..3.0),
                10_000,
            ));
        }
        let mut violations = 0;
        let mut worst = 0.0f64;
        for spec in &specs {
            let UpdateFamily::Exp { c1, c2 } = spec.family else { unreachable!() };
            let xs = drifted(&iterate_sequence(spec)?, drift);
            let v = exp_sandwich_violation(&xs, c1, c2, spec.x0);
            if v > LEMMA_SLACK {
                violations += 1;
            }
            worst = worst.max(v);
        }
        checks.push(LemmaCheckSummary {
            lemma: "exp-growth-sandwich".into(),
            instances: specs.len(),
            violations,
            worst,
        });
    }

    // first passage: zeta = 6, v = 10 x0 regime
    {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut violations = 0;
        let mut worst = 0.0f64;
        let instances = 20;
        for i in 0..instances {
            let q = if i % 3 == 2 { 4u32 } else { 3 };
            let x0 = rng.gen_range(0.2..0.5);
            let eta = if q == 3 {
                rng.gen_range(2e-3..1e-2)
            } else {
                rng.gen_range(5e-3..2e-2)
            };
            let horizon = 400_000;
            let schedule = if i % 2 == 0 {
                CtSchedule::Constant {
                    c: rng.gen_range(0.5..2.0),
                }
            } else {
                let lo = rng.gen_range(0.5..1.0);
                let hi = rng.gen_range(lo + 0.1..2.2);
                let values = (0..horizon).map(|_| rng.gen_range(lo..hi)).collect();
                CtSchedule::Explicit {
                    values,
                    lower: lo,
                    upper: hi,
                }
            };
            let spec = SequenceSpec::power(x0, eta, q, schedule, horizon);
            let rep = if drift == 0.0 {
                check_first_passage(&spec, 10.0 * x0, 6.0)?
            } else {
                let xs = drifted(&iterate_while(&spec, |x| x < 10.0 * x0)?, drift);
                let t_v = first_passage_time(&xs, 10.0 * x0)?;
                let clean = check_first_passage(&spec, 10.0 * x0, 6.0)?;
                FirstPassageReport {
                    t_v,
                    holds: (t_v as f64) >= clean.lower - LEMMA_SLACK
                        && (t_v as f64) <= clean.upper + LEMMA_SLACK,
                    ..clean
                }
            };
            if !rep.holds {
                violations += 1;
                worst = worst
                    .max(rep.lower - rep.t_v as f64)
                    .max(rep.t_v as f64 - rep.upper);
            }
        }
        checks.push(LemmaCheckSummary {
            lemma: "first-passage-bounds".into(),
            instances,
            violations,
            worst,
        });
    }

    // tensor-power partial sums: pinned plus randomized fine-step instances
    {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let mut cases: Vec<(SequenceSpec, usize, f64)> = Vec::new();
        {
            let spec = SequenceSpec::power(1.0, 1e-3, 3, CtSchedule::Constant { c: 1.0 }, 20_000);
            cases.push((spec.clone(), 5, 0.5));
            cases.push((spec, 0, 0.5));
        }
        for i in 0..20 {
            let q = [3u32, 4, 6][i % 3];
            let (zeta, k) = match q {
                3 => (rng.gen_range(0.3..0.85), rng.gen_range(1..=7usize)),
                4 => (rng.gen_range(0.2..0.6), rng.gen_range(1..=4usize)),
                _ => (rng.gen_range(0.15..0.4), rng.gen_range(1..=2usize)),
            };
            let x0: f64 = rng.gen_range(0.6..1.4);
            let chi: f64 = rng.gen_range(0.3..1.5);
            // first-step rule: eta C x0^(q-1) stays well under zeta x0
            let eta = 0.01 * zeta * x0.powi(2 - q as i32) / chi;
            let per_level = (zeta / (eta * 0.5 * chi * x0.powi(q as i32 - 2))).ceil() as usize + 80;
            let horizon = (k + 1) * per_level + 50;
            let schedule = if i % 2 == 0 {
                CtSchedule::Constant { c: chi }
            } else {
                let lo = 0.5 * chi;
                let values = (0..horizon).map(|_| rng.gen_range(lo..chi)).collect();
                CtSchedule::Explicit {
                    values,
                    lower: lo,
                    upper: chi,
                }
            };
            cases.push((SequenceSpec::power(x0, eta, q, schedule, horizon), k, zeta));
        }
        let mut violations = 0;
        let mut worst = 0.0f64;
        for (spec, k, zeta) in &cases {
            let UpdateFamily::Power { eta, q, ref schedule } = spec.family else { unreachable!() };
            let cutoff = (1.0 + zeta).powi(*k as i32) * spec.x0;
            let xs = drifted(&iterate_while(spec, |x| x <= cutoff)?, drift);
            let rep = tensor_power_report(&xs, eta, q, schedule, spec.x0, *k, *zeta)?;
            if !(rep.upper_ok && rep.lower_ok) {
                violations += 1;
                worst = worst.max(rep.sum - rep.upper).max(rep.lower - rep.sum);
            }
        }
        checks.push(LemmaCheckSummary {
            lemma: "tensor-power-partial-sums".into(),
            instances: cases.len(),
            violations,
            worst,
        });
    }

    // sequence comparison: admissible randomized instances
    {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut violations = 0;
        let mut worst = 0.0f64;
        let instances = 50;
        for i in 0..instances {
            let q = if i % 4 == 3 { 4u32 } else { 3 };
            let c: f64 = rng.gen_range(0.05..0.3);
            let a_y: f64 = rng.gen_range(1.0..3.0);
            let a_x = a_y * rng.gen_range(0.5..2.0);
            let y0 = 0.5 * c * a_y;
            let x0 = (1.0 + c) * y0 * 1.02;
            let cbar = rng.gen_range(0.5..2.0);
            let horizon = 400_000;
            let schedule = if i % 2 == 0 {
                CtSchedule::Constant { c: 0.9 * cbar }
            } else {
                let lo = 0.3 * cbar;
                let hi = 0.95 * cbar;
                let values = (0..horizon).map(|_| rng.gen_range(lo..hi)).collect();
                CtSchedule::Explicit {
                    values,
                    lower: lo,
                    upper: hi,
                }
            };
            let (_, hi) = schedule.bounds();
            let eta = 0.3 * c / (hi * y0.powi(q as i32 - 3) * a_y);
            let rep = check_sequence_compare(x0, y0, &schedule, q, eta, a_x, a_y, horizon)?;
            assert!(rep.admissible, "suite instance drifted out of admissibility");
            let (t_x, t_y) = if drift == 0.0 {
                (rep.t_x, rep.t_y)
            } else {
                // drift only the leader: an integrator bug need not be fair
                let spec_x = SequenceSpec::power(x0, eta, q, schedule.clone(), horizon);
                let xs = drifted(&iterate_while(&spec_x, |x| x < a_x)?, drift);
                (first_passage_time(&xs, a_x)?, rep.t_y)
            };
            if t_x > t_y {
                violations += 1;
                worst = worst.max((t_x - t_y) as f64);
            }
        }
        checks.push(LemmaCheckSummary {
            lemma: "sequence-comparison".into(),
            instances,
            violations,
            worst,
        });
    }

    // spectrum union over disjoint orthogonal column spaces
    {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        let mut violations = 0;
        let mut worst = 0.0f64;
        let instances = 20;
        for _ in 0..instances {
            let n = rng.gen_range(6..=24usize);
            let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            let c1 = rng.gen_range(1..n);
            let c2 = rng.gen_range(1..=n - c1);
            let k1 = rng.gen_range(1..=4usize);
            let k2 = rng.gen_range(1..=4usize);
            let mut a = q.columns(0, c1).into_owned()
                * DMatrix::from_fn(c1, k1, |_, _| rng.gen_range(-2.0..2.0));
            let b = q.columns(c1, c2).into_owned()
                * DMatrix::from_fn(c2, k2, |_, _| rng.gen_range(-2.0..2.0));
            if drift != 0.0 {
                // corrupt: leak a shared direction across the two factors
                for r in 0..n {
                    a[(r, 0)] += drift * b[(r, 0)];
                }
            }
            let tol = 1e-8 * (a.norm() + b.norm()) + 1e-12;
            match spectrum_union_check(&a, &b) {
                Ok(dev) => {
                    if dev > tol {
                        violations += 1;
                        worst = worst.max(dev);
                    }
                }
                Err(Error::NotOrthogonal { deviation, .. }) => {
                    violations += 1;
                    worst = worst.max(deviation);
                }
                Err(e) => return Err(e),
            }
        }
        checks.push(LemmaCheckSummary {
            lemma: "disjoint-spectrum-union".into(),
            instances,
            violations,
            worst,
        });
    }

    // concentration bands for labels and per-basis counts
    {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let mut violations = 0;
        let mut worst = 0.0f64;
        let instances = 20;
        for i in 0..instances {
            let k = 2 + (i % 5) * 2;
            let n = 300 + (i % 8) * 100;
            let d = 2 * k + 4;
            let basis = make_basis(d, k, BasisMode::OneHot, 7)?;
            let template =
                sample_dataset(&basis, n, 2, SPolicy::FixedSize { s: 1 }, 0.0, rng.gen::<u32>() as u64)?;
            let rep = check_count_bands(&template, 0.05, 120)?;
            if !(rep.label_pass && rep.count_pass) {
                violations += 1;
                worst = worst
                    .max(rep.threshold - rep.label_coverage)
                    .max(rep.threshold - rep.count_coverage);
            }
        }
        checks.push(LemmaCheckSummary {
            lemma: "count-concentration-bands".into(),
            instances,
            violations,
            worst,
        });
    }

    let all_ok = checks.iter().all(|c| c.violations == 0);
    Ok(LemmaSuiteReport { checks, all_ok })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_iteration_examples() {
        let spec = SequenceSpec::exp(1.0, 1.0, 1.0, 2);
        let xs = iterate_sequence(&spec).unwrap();
        let x1 = 1.0 + (-1.0f64).exp();
        assert!((xs[1] - x1).abs() <= 1e-15);
        assert!((xs[2] - (x1 + (-x1).exp())).abs() <= 1e-15);
    }

    #[test]
    fn power_zero_rate_is_fixed_point() {
        let spec = SequenceSpec::power(2.0, 0.5, 3, CtSchedule::Constant { c: 0.0 }, 10);
        let xs = iterate_sequence(&spec).unwrap();
        assert!(xs.iter().all(|&x| x == 2.0));
    }

    #[test]
    fn positive_rates_strictly_increase() {
        let spec = SequenceSpec::power(0.5, 1e-3, 3, CtSchedule::Constant { c: 0.7 }, 50);
        let xs = iterate_sequence(&spec).unwrap();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
        let spec = SequenceSpec::exp(0.0, 0.3, 1.5, 50);
        let xs = iterate_sequence(&spec).unwrap();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn overflow_reports_horizon_error() {
        let spec = SequenceSpec::power(2.0, 1.0, 6, CtSchedule::Constant { c: 1.0 }, 100);
        match iterate_sequence(&spec) {
            Err(Error::Horizon { step }) => assert!(step > 0),
            other => panic!("expected Horizon, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn schedule_bounds_validated() {
        let bad = CtSchedule::Explicit {
            values: vec![1.0, 3.0],
            lower: 0.5,
            upper: 2.0,
        };
        let spec = SequenceSpec::power(1.0, 0.1, 3, bad, 2);
        assert!(matches!(iterate_sequence(&spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exp_sandwich_pinned_scans() {
        // initial step: both bounds reproduce x0 exactly
        let spec = SequenceSpec::exp(0.7, 1.3, 0.9, 0);
        assert_eq!(check_exp_sandwich(&spec).unwrap(), 0.0);

        let spec = SequenceSpec::exp(0.0, 1.0, 1.0, 100_000);
        assert!(check_exp_sandwich(&spec).unwrap() <= 1e-9);
        let spec = SequenceSpec::exp(3.0, 0.5, 2.0, 10_000);
        assert!(check_exp_sandwich(&spec).unwrap() <= 1e-9);
    }

    #[test]
    fn first_passage_within_bounds() {
        let spec = SequenceSpec::power(0.3, 5e-3, 3, CtSchedule::Constant { c: 1.0 }, 200_000);
        let rep = check_first_passage(&spec, 3.0, 6.0).unwrap();
        assert!(rep.holds, "t_v {} not in [{}, {}]", rep.t_v, rep.lower, rep.upper);
    }

    #[test]
    fn first_passage_rejects_reached_target() {
        let spec = SequenceSpec::power(0.3, 5e-3, 3, CtSchedule::Constant { c: 1.0 }, 100);
        assert!(matches!(
            check_first_passage(&spec, 0.2, 6.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn doubling_eta_roughly_halves_passage_time() {
        let base = SequenceSpec::power(0.3, 2e-3, 3, CtSchedule::Constant { c: 1.0 }, 400_000);
        let fast = SequenceSpec::power(0.3, 4e-3, 3, CtSchedule::Constant { c: 1.0 }, 400_000);
        let t_slow = check_first_passage(&base, 3.0, 6.0).unwrap().t_v as f64;
        let t_fast = check_first_passage(&fast, 3.0, 6.0).unwrap().t_v as f64;
        let ratio = t_slow / t_fast;
        assert!((1.9..=2.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn tensor_power_pinned_example() {
        let spec = SequenceSpec::power(1.0, 1e-3, 3, CtSchedule::Constant { c: 1.0 }, 20_000);
        let rep = check_tensor_power_sums(&spec, 5, 0.5).unwrap();
        assert!(rep.upper_ok && rep.lower_ok, "{rep:?}");
        assert!(rep.sum > 0.0);
    }

    #[test]
    fn tensor_power_k_zero_trivial() {
        let spec = SequenceSpec::power(1.0, 1e-3, 3, CtSchedule::Constant { c: 1.0 }, 100);
        let rep = check_tensor_power_sums(&spec, 0, 0.5).unwrap();
        assert_eq!(rep.sum, 0.0);
        assert!(rep.upper_ok && rep.lower_ok);
        assert_eq!(rep.crossings, vec![0]);
    }

    #[test]
    fn compare_head_start_wins() {
        let sched = CtSchedule::Constant { c: 1.0 };
        // y0 = 0.05, x0 = 2 y0, A = 2: c = 1, y0/A = 0.025 <= 1,
        // eta_limit = 1/(1*2) = 0.5
        let rep = check_sequence_compare(0.1, 0.05, &sched, 3, 0.01, 2.0, 2.0, 200_000).unwrap();
        assert!(rep.admissible);
        assert!(rep.ordered, "t_x {} > t_y {}", rep.t_x, rep.t_y);
        assert!(rep.t_x < rep.t_y);
    }

    #[test]
    fn compare_equal_starts_tie() {
        let sched = CtSchedule::Constant { c: 1.0 };
        let rep = check_sequence_compare(0.05, 0.05, &sched, 3, 0.01, 2.0, 2.0, 200_000).unwrap();
        assert_eq!(rep.t_x, rep.t_y);
        assert!(rep.ordered);
        // no head start: c = 0 fails the preconditions
        assert!(!rep.admissible);
    }

    #[test]
    fn compare_reports_inadmissible_without_judgment() {
        let sched = CtSchedule::Constant { c: 1.0 };
        // eta far above the operationalized limit
        let rep = check_sequence_compare(0.1, 0.05, &sched, 3, 5.0, 2.0, 2.0, 1_000).unwrap();
        assert!(!rep.eta_ok);
        assert!(!rep.admissible);
    }

    #[test]
    fn count_bands_cover() {
        let basis = make_basis(24, 10, BasisMode::OneHot, 1).unwrap();
        let template =
            sample_dataset(&basis, 1000, 2, SPolicy::FixedSize { s: 1 }, 0.0, 5).unwrap();
        let rep = check_count_bands(&template, 0.05, 200).unwrap();
        assert!(rep.asserted);
        assert!(rep.label_coverage >= 0.90, "label coverage {}", rep.label_coverage);
        assert!(rep.count_coverage >= 0.90, "count coverage {}", rep.count_coverage);
        assert!((rep.cell_mean - 50.0).abs() <= 1e-12);
    }

    #[test]
    fn count_bands_vacuous_delta_skipped() {
        let basis = make_basis(10, 2, BasisMode::OneHot, 1).unwrap();
        let template = sample_dataset(&basis, 50, 2, SPolicy::FixedSize { s: 1 }, 0.0, 5).unwrap();
        let rep = check_count_bands(&template, 1.0, 20).unwrap();
        assert!(!rep.asserted);
        assert!(rep.label_pass && rep.count_pass);
    }

    #[test]
    fn count_bands_reject_external_data() {
        let basis = make_basis(10, 2, BasisMode::OneHot, 1).unwrap();
        let mut template =
            sample_dataset(&basis, 20, 2, SPolicy::FixedSize { s: 1 }, 0.0, 5).unwrap();
        template.provenance = Provenance::External {
            source: "fixture".into(),
        };
        assert!(matches!(
            check_count_bands(&template, 0.05, 5),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn lemma_suite_clean() {
        let rep = run_lemma_suite().unwrap();
        assert!(
            rep.all_ok,
            "violating lemmas: {:?}",
            rep.violated_lemmas()
        );
        assert_eq!(rep.checks.len(), 6);
    }

    #[test]
    fn corrupted_suite_detects_violations() {
        let rep = run_lemma_suite_corrupted(1e-2).unwrap();
        assert!(!rep.all_ok, "drifted integrator must be caught");
        assert!(rep
            .checks
            .iter()
            .any(|c| c.lemma == "exp-growth-sandwich" && c.violations > 0));
    }
}
