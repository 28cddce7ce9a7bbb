//! Reference implementations shared by the integration suites.
//!
//! The oracle evaluates every estimator directly from its defining sum, using only
//! the fitted working models' per-row predictions. It shares no code with the
//! estimators under test beyond the model fits and bias-function evaluation.

#![allow(dead_code)]

use transport_core::simulate::CovariateSpec;
use transport_core::simulate::{LinearIndex, Violation};
use transport_core::{
    eval_u, read_dataset, Arm, BiasFunctionSpec, Design, DgpConfig, Estimator, NuisanceModels, Schema, StudyDataset,
};

pub const D6_CSV: &str = "s,a,y\n1,1,10\n1,1,14\n1,0,6\n1,0,8\n0,,\n0,,\n";

pub fn d6(design: Design) -> StudyDataset {
    read_dataset(D6_CSV.as_bytes(), &Schema::default(), design).expect("D6 parses")
}

/// Two confounders (`x1` normal, `x2` binary); treatment effect `1 + 1.5·x1`.
pub fn dgp(n: usize, seed: u64, design: Design) -> DgpConfig {
    DgpConfig {
        n,
        covariates: vec![CovariateSpec::normal("x1", 0.0, 1.0), CovariateSpec::bernoulli("x2", 0.4)],
        participation: LinearIndex::new(0.2, vec![0.8, -0.6]),
        treatment_probability: 0.5,
        outcome_treated: LinearIndex::new(3.0, vec![2.0, 1.0]),
        outcome_control: LinearIndex::new(2.0, vec![0.5, 1.0]),
        noise_sd: 1.0,
        violation: Violation::default(),
        seed,
        design,
    }
}

#[derive(Debug, Clone)]
struct Preds {
    s: Vec<bool>,
    a: Vec<Option<Arm>>,
    y: Vec<f64>,
    p: Vec<f64>,
    e1: Vec<f64>,
    g: [Vec<f64>; 2],
}

fn preds(ds: &StudyDataset, nm: &NuisanceModels) -> Preds {
    let mut out = Preds {
        s: Vec::new(),
        a: Vec::new(),
        y: Vec::new(),
        p: Vec::new(),
        e1: Vec::new(),
        g: [Vec::new(), Vec::new()],
    };
    for row in &ds.rows {
        out.s.push(row.s());
        out.a.push(row.arm());
        out.y.push(row.outcome().unwrap_or(f64::NAN));
        out.p.push(nm.participation_probability(&row.x).unwrap());
        out.e1.push(nm.treatment_probability(Arm::Treated, &row.x).unwrap());
        out.g[0].push(nm.outcome_mean(Arm::Control, &row.x).unwrap());
        out.g[1].push(nm.outcome_mean(Arm::Treated, &row.x).unwrap());
    }
    out
}

/// Arm-`a` mean of `estimator` from its defining formula.
pub fn oracle_mean(
    ds: &StudyDataset,
    nm: &NuisanceModels,
    estimator: Estimator,
    arm: Arm,
    bias: &BiasFunctionSpec,
) -> f64 {
    let pr = preds(ds, nm);
    let n = ds.rows.len();
    let a = arm.index();
    let u: Vec<f64> = ds.rows.iter().map(|r| eval_u(bias, arm, &r.x).unwrap()).collect();
    let e = |i: usize| if arm == Arm::Treated { pr.e1[i] } else { 1.0 - pr.e1[i] };
    let in_arm = |i: usize| pr.s[i] && pr.a[i] == Some(arm);

    // Inverse odds (non-nested) and inverse probability (nested) weights.
    let w_io: Vec<f64> = (0..n)
        .map(|i| if in_arm(i) { (1.0 - pr.p[i]) / (pr.p[i] * e(i)) } else { 0.0 })
        .collect();
    let w_ip: Vec<f64> = (0..n).map(|i| if in_arm(i) { 1.0 / (pr.p[i] * e(i)) } else { 0.0 }).collect();

    let mut n0 = 0.0;
    let mut target_g = 0.0;
    let mut target_u = 0.0;
    for i in 0..n {
        if !pr.s[i] {
            n0 += 1.0;
            target_g += pr.g[a][i];
            target_u += u[i];
        }
    }
    let nf = n as f64;
    let all_g: f64 = pr.g[a].iter().sum();

    let mut sw_io = 0.0;
    let mut swy_io = 0.0;
    let mut swr_io = 0.0;
    let mut swbc_io = 0.0;
    let mut sw_ip = 0.0;
    let mut swy_ip = 0.0;
    let mut swr_ip = 0.0;
    let mut swbc_ip = 0.0;
    for i in (0..n).filter(|&i| in_arm(i)) {
        let y = pr.y[i];
        sw_io += w_io[i];
        swy_io += w_io[i] * y;
        swr_io += w_io[i] * (y - pr.g[a][i]);
        swbc_io += w_io[i] * (y - u[i]);
        sw_ip += w_ip[i];
        swy_ip += w_ip[i] * y;
        swr_ip += w_ip[i] * (y - pr.g[a][i]);
        swbc_ip += w_ip[i] * (y - u[i] * (1.0 - pr.p[i]));
    }

    match estimator {
        Estimator::Om => (target_g - target_u) / n0,
        Estimator::Iow1 => (swy_io - target_u) / n0,
        Estimator::Iow2 => swy_io / sw_io - target_u / n0,
        Estimator::Aiow1 => (swr_io + target_g - target_u) / n0,
        Estimator::Aiow2 => swr_io / sw_io + (target_g - target_u) / n0,
        Estimator::BcOutcomeIow => swbc_io / sw_io,
        Estimator::OmPop => (all_g - target_u) / nf,
        Estimator::Ipw1 => (swy_ip - target_u) / nf,
        Estimator::Ipw2 => swy_ip / sw_ip - target_u / nf,
        Estimator::Aipw1 => (swr_ip + all_g - target_u) / nf,
        Estimator::Aipw2 => swr_ip / sw_ip + (all_g - target_u) / nf,
        Estimator::BcOutcomeIpw => swbc_ip / sw_ip,
    }
}

/// The estimator whose uncorrected form a bias-corrected estimator reduces to.
pub fn base_of(estimator: Estimator) -> Estimator {
    match estimator {
        Estimator::BcOutcomeIow => Estimator::Iow2,
        Estimator::BcOutcomeIpw => Estimator::Ipw2,
        e => e,
    }
}

/// Mean and Monte Carlo standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
