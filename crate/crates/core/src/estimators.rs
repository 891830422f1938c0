//! Named decision rules `δ(y)` for the normal location model.

use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::horseshoe::{posterior_mean, HorseshoeConfig};
use crate::rng::SimRng;
use crate::shrinkage::{shrink_betaprime_closed, ShrinkageTable};

#[derive(Debug, Clone)]
pub enum RuleForm {
    Identity,
    RadialTable(Arc<ShrinkageTable>),
    RadialClosed {
        p: usize,
    },
    /// Untruncated `(1 − (p−2)/‖y‖²)·y`. Serves as a SURE reference.
    JamesStein {
        p: usize,
    },
    Horseshoe(HorseshoeConfig),
}

#[derive(Debug, Clone)]
pub struct DecisionRule {
    pub label: String,
    pub form: RuleForm,
}

impl DecisionRule {
    pub fn new(label: impl Into<String>, form: RuleForm) -> Result<Self> {
        match &form {
            RuleForm::RadialClosed { p } if *p < 5 => {
                return Err(Error::InvalidSpec(format!(
                    "closed-form BetaPrime rule needs p ≥ 5, got {p}"
                )))
            }
            RuleForm::JamesStein { p } if *p < 3 => {
                return Err(Error::InvalidSpec(format!(
                    "James–Stein needs p ≥ 3, got {p}"
                )))
            }
            RuleForm::Horseshoe(cfg) => cfg.validate()?,
            _ => {}
        }
        Ok(Self {
            label: label.into(),
            form,
        })
    }

    pub fn mle() -> Self {
        Self {
            label: "mle".into(),
            form: RuleForm::Identity,
        }
    }

    pub fn james_stein(p: usize) -> Result<Self> {
        Self::new("js", RuleForm::JamesStein { p })
    }

    pub fn bnn_hyper(p: usize) -> Result<Self> {
        Self::new("bnn-hyper", RuleForm::RadialClosed { p })
    }

    pub fn radial_table(label: impl Into<String>, table: ShrinkageTable) -> Self {
        Self {
            label: label.into(),
            form: RuleForm::RadialTable(Arc::new(table)),
        }
    }

    pub fn horseshoe(config: HorseshoeConfig) -> Result<Self> {
        Self::new("horseshoe", RuleForm::Horseshoe(config))
    }

    /// Required input length, if the rule fixes one.
    pub fn dimension(&self) -> Option<usize> {
        match &self.form {
            RuleForm::Identity | RuleForm::Horseshoe(_) => None,
            RuleForm::RadialTable(t) => Some(t.dimension()),
            RuleForm::RadialClosed { p } | RuleForm::JamesStein { p } => Some(*p),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self.form, RuleForm::Horseshoe(_))
    }

    /// Multiplier `a(‖y‖²)` for radial rules; `None` otherwise.
    pub fn shrink_factor(&self, s: f64) -> Result<Option<f64>> {
        Ok(match &self.form {
            RuleForm::Identity => Some(1.0),
            RuleForm::RadialTable(t) => Some(t.eval(s)),
            RuleForm::RadialClosed { p } => Some(shrink_betaprime_closed(*p, s)?),
            // y = 0 maps to 0
            RuleForm::JamesStein { p } => Some(if s > 0.0 {
                1.0 - (*p as f64 - 2.0) / s
            } else {
                0.0
            }),
            RuleForm::Horseshoe(_) => None,
        })
    }

    pub fn apply(&self, y: &[f64], rng: Option<&mut SimRng>) -> Result<Vec<f64>> {
        if let Some(p) = self.dimension() {
            if y.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: y.len(),
                });
            }
        }
        if let RuleForm::Horseshoe(cfg) = &self.form {
            let rng = rng.ok_or_else(|| domain("the horseshoe rule needs a random stream"))?;
            return Ok(posterior_mean(y, cfg, None, rng)?.estimate);
        }
        let s: f64 = y.iter().map(|x| x * x).sum();
        let a = self
            .shrink_factor(s)?
            .expect("deterministic rules are radial");
        Ok(y.iter().map(|x| a * x).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::shrinkage::{build_table, ShrinkageSource};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Haar-ish orthogonal matrix by Gram–Schmidt on Gaussian columns.
    fn random_orthogonal(p: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < p {
            let mut v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let n = norm(&v);
            q.push(v.into_iter().map(|x| x / n).collect());
        }
        q
    }

    fn matvec(q: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        q.iter()
            .map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn radial_rules() -> Vec<DecisionRule> {
        let table = build_table(ShrinkageSource::BetaPrimeClosed, 5, 200, 400.0).unwrap();
        vec![
            DecisionRule::mle(),
            DecisionRule::james_stein(5).unwrap(),
            DecisionRule::bnn_hyper(5).unwrap(),
            DecisionRule::radial_table("tab", table),
        ]
    }

    #[test]
    fn identity_returns_input() {
        let y = [1.0, 2.0, 0.0, 0.0, 0.0];
        assert_eq!(DecisionRule::mle().apply(&y, None).unwrap(), y.to_vec());
    }

    #[test]
    fn closed_rule_example() {
        let y = [1.0, 1.0, 0.0, 0.0, 0.0];
        let out = DecisionRule::bnn_hyper(5).unwrap().apply(&y, None).unwrap();
        for (o, yi) in out.iter().zip(&y) {
            assert!((o - 0.290616692785362 * yi).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_maps_to_origin() {
        for rule in radial_rules() {
            assert_eq!(
                rule.apply(&[0.0; 5], None).unwrap(),
                vec![0.0; 5],
                "{}",
                rule.label
            );
        }
    }

    #[test]
    fn dimension_checks() {
        assert!(matches!(
            DecisionRule::james_stein(5).unwrap().apply(&[1.0; 4], None),
            Err(Error::DimensionMismatch {
                expected: 5,
                actual: 4
            })
        ));
        assert!(DecisionRule::bnn_hyper(4).is_err());
        assert!(DecisionRule::james_stein(2).is_err());
        let hs = DecisionRule::horseshoe(HorseshoeConfig::default()).unwrap();
        assert!(hs.apply(&[1.0; 3], None).is_err());
    }

    #[test]
    fn radial_rules_commute_with_rotations() {
        let mut rng = stream(11, &[]);
        for rule in radial_rules() {
            for _ in 0..20 {
                let q = random_orthogonal(5, &mut rng);
                let scale = 10f64.powf(rng.random_range(-1.0..2.5));
                let y: Vec<f64> = (0..5)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let lhs = rule.apply(&matvec(&q, &y), None).unwrap();
                let rhs = matvec(&q, &rule.apply(&y, None).unwrap());
                for (a, b) in lhs.iter().zip(&rhs) {
                    assert!(
                        (a - b).abs() <= 1e-12 * (1.0 + norm(&y)),
                        "{}: {a} vs {b}",
                        rule.label
                    );
                }
            }
        }
    }

    #[test]
    fn bounded_factors_contract() {
        let mut rng = stream(12, &[]);
        let rules = radial_rules();
        for _ in 0..500 {
            let scale = 10f64.powf(rng.random_range(-2.0..2.5));
            let y: Vec<f64> = (0..5)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for rule in rules
                .iter()
                .filter(|r| !matches!(r.form, RuleForm::JamesStein { .. }))
            {
                assert!(norm(&rule.apply(&y, None).unwrap()) <= norm(&y));
            }
        }
    }

    #[test]
    fn horseshoe_is_reproducible_per_stream() {
        let cfg = HorseshoeConfig {
            iterations: 300,
            burn_in: 100,
            thin: 2,
            seed: 0,
        };
        let rule = DecisionRule::horseshoe(cfg).unwrap();
        let y = [2.0, 0.0, -1.0];
        let a = rule.apply(&y, Some(&mut stream(9, &[]))).unwrap();
        let b = rule.apply(&y, Some(&mut stream(9, &[]))).unwrap();
        assert_eq!(a, b);
    }
}
