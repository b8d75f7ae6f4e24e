//! Continual-learning trainers.

mod coreset;
mod loss;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::distributions::DEFAULT_TEMPERATURE;
use crate::error::{Error, Result};

pub use coreset::{make_inducing, update_coreset, Coreset, CoresetEntry, InducingMode};
pub use loss::{loss, nll_sum_var};
pub use optim::{Adam, OneCycle};
pub use trainer::{
    empirical_fisher, train_task, Draw, EwcState, Objective, PriorMoments, Quadratic, Regulariser,
    SiState, Terms, TrainerState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    JointMap,
    FineTune,
    Ewc,
    Si,
    Er,
    PGVcl,
    LGVcl,
    PGmVcl,
    LGmVcl,
    PGSfsvi,
    LGSfsvi,
    PGmSfsvi,
    LGmSfsvi,
}

/// Where the KL term lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Parameter,
    Function,
}

/// Which variational family a VI method fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Mixture,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::JointMap,
        Method::FineTune,
        Method::Ewc,
        Method::Si,
        Method::Er,
        Method::PGVcl,
        Method::LGVcl,
        Method::PGmVcl,
        Method::LGmVcl,
        Method::PGSfsvi,
        Method::LGSfsvi,
        Method::PGmSfsvi,
        Method::LGmSfsvi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::JointMap => "joint-map",
            Method::FineTune => "fine-tune",
            Method::Ewc => "ewc",
            Method::Si => "si",
            Method::Er => "er",
            Method::PGVcl => "p-g-vcl",
            Method::LGVcl => "l-g-vcl",
            Method::PGmVcl => "p-gm-vcl",
            Method::LGmVcl => "l-gm-vcl",
            Method::PGSfsvi => "p-g-sfsvi",
            Method::LGSfsvi => "l-g-sfsvi",
            Method::PGmSfsvi => "p-gm-sfsvi",
            Method::LGmSfsvi => "l-gm-sfsvi",
        }
    }

    pub fn from_name(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_vi(self) -> bool {
        self.family().is_some()
    }

    pub fn family(self) -> Option<Family> {
        use Method::*;
        match self {
            PGVcl | LGVcl | PGSfsvi | LGSfsvi => Some(Family::Gaussian),
            PGmVcl | LGmVcl | PGmSfsvi | LGmSfsvi => Some(Family::Mixture),
            _ => None,
        }
    }

    pub fn space(self) -> Option<Space> {
        use Method::*;
        match self {
            PGVcl | LGVcl | PGmVcl | LGmVcl => Some(Space::Parameter),
            PGSfsvi | LGSfsvi | PGmSfsvi | LGmSfsvi => Some(Space::Function),
            _ => None,
        }
    }

    /// Keeps the initial prior and replays the coreset.
    pub fn is_likelihood_focused(self) -> bool {
        use Method::*;
        matches!(self, LGVcl | LGmVcl | LGSfsvi | LGmSfsvi)
    }

    /// Replaces the prior with the previous variational PDF.
    pub fn is_prior_focused(self) -> bool {
        use Method::*;
        matches!(self, PGVcl | PGmVcl | PGSfsvi | PGmSfsvi)
    }

    /// Trains on a coreset minibatch alongside the current one.
    pub fn replays(self) -> bool {
        self.is_likelihood_focused() || self == Method::Er
    }

    /// The counterpart with the other prior treatment, for VI methods.
    pub fn counterpart(self) -> Option<Method> {
        use Method::*;
        Some(match self {
            PGVcl => LGVcl,
            LGVcl => PGVcl,
            PGmVcl => LGmVcl,
            LGmVcl => PGmVcl,
            PGSfsvi => LGSfsvi,
            LGSfsvi => PGSfsvi,
            PGmSfsvi => LGmSfsvi,
            LGmSfsvi => PGmSfsvi,
            _ => return None,
        })
    }

    /// The same method with the other variational family.
    pub fn with_family(self, family: Family) -> Option<Method> {
        use Method::*;
        let (space, likelihood) = (self.space()?, self.is_likelihood_focused());
        Some(match (space, likelihood, family) {
            (Space::Parameter, false, Family::Gaussian) => PGVcl,
            (Space::Parameter, true, Family::Gaussian) => LGVcl,
            (Space::Parameter, false, Family::Mixture) => PGmVcl,
            (Space::Parameter, true, Family::Mixture) => LGmVcl,
            (Space::Function, false, Family::Gaussian) => PGSfsvi,
            (Space::Function, true, Family::Gaussian) => LGSfsvi,
            (Space::Function, false, Family::Mixture) => PGmSfsvi,
            (Space::Function, true, Family::Mixture) => LGmSfsvi,
        })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter-space mixture KL estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlEstimator {
    UpperBound,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub method: Method,
    /// Mixture components, ignored by Gaussian and MAP methods.
    pub k: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub coreset_per_task: usize,
    /// Inducing points per step; defaults to the effective batch size.
    pub n_inducing: Option<usize>,
    pub temperature: f64,
    pub seed: u64,
    pub lambda_reg: f64,
    pub xi: f64,
    pub kl_estimator: KlEstimator,
    pub kl_mc_samples: usize,
    pub expectation_samples: usize,
    /// Multiplies the KL or penalty term. 1 is the intended objective.
    pub kl_weight: f64,
    pub init_sigma: f64,
    /// Redraw inducing points every step rather than once per task.
    pub resample_inducing: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            method: Method::LGmSfsvi,
            k: 3,
            base_lr: 0.1,
            batch_size: 16,
            epochs: 100,
            coreset_per_task: 16,
            n_inducing: None,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            lambda_reg: 100.0,
            xi: 1.0,
            kl_estimator: KlEstimator::UpperBound,
            kl_mc_samples: 4,
            expectation_samples: 1,
            kl_weight: 1.0,
            init_sigma: 0.05,
            resample_inducing: true,
        }
    }
}

impl TrainerConfig {
    pub fn for_method(method: Method) -> Self {
        TrainerConfig {
            method,
            ..TrainerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.n_inducing == Some(0) {
            return bad("n_inducing must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.expectation_samples == 0 {
            return bad("expectation_samples must be positive");
        }
        if self.kl_estimator == KlEstimator::MonteCarlo && self.kl_mc_samples == 0 {
            return bad("kl_mc_samples must be positive");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight must be nonnegative");
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return bad("init_sigma must be positive");
        }
        match self.method {
            Method::Ewc | Method::Si if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) => {
                return bad("lambda_reg must be nonnegative");
            }
            Method::Si if !(self.xi > 0.0 && self.xi.is_finite()) => {
                return bad("xi must be positive");
            }
            m if m.replays() && self.coreset_per_task == 0 => {
                return bad("replay methods need coreset_per_task > 0");
            }
            Method::PGSfsvi | Method::PGmSfsvi if self.coreset_per_task == 0 => {
                return bad("prior-focused SFSVI draws inducing points from the coreset");
            }
            _ => {}
        }
        Ok(())
    }

    /// Function-space methods train at a tenth of the configured rate.
    pub fn effective_lr(&self) -> f64 {
        match self.method.space() {
            Some(Space::Function) => 0.1 * self.base_lr,
            _ => self.base_lr,
        }
    }

    /// Replaying methods split the stated batch between current data and
    /// the coreset.
    pub fn effective_batch(&self) -> usize {
        if self.method.replays() {
            (self.batch_size / 2).max(1)
        } else {
            self.batch_size
        }
    }

    pub fn inducing_count(&self) -> usize {
        self.n_inducing.unwrap_or_else(|| self.effective_batch())
    }

    /// Components of the variational family.
    pub fn components(&self) -> usize {
        match self.method.family() {
            Some(Family::Mixture) => self.k,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_name(m.name()), Some(m));
        }
        assert_eq!(Method::from_name("vcl"), None);
    }

    #[test]
    fn classification() {
        assert!(Method::LGmSfsvi.is_likelihood_focused());
        assert_eq!(Method::LGmSfsvi.counterpart(), Some(Method::PGmSfsvi));
        assert_eq!(Method::PGmVcl.with_family(Family::Gaussian), Some(Method::PGVcl));
        assert!(Method::Er.replays() && !Method::Er.is_vi());
        assert_eq!(Method::JointMap.space(), None);
    }

    #[test]
    fn effective_hyperparameters() {
        let mut c = TrainerConfig::for_method(Method::LGSfsvi);
        assert!((c.effective_lr() - 0.01).abs() < 1e-15);
        assert_eq!(c.effective_batch(), 8);
        c.method = Method::PGVcl;
        assert_eq!(c.effective_lr(), 0.1);
        assert_eq!(c.effective_batch(), 16);
        assert_eq!(c.components(), 1);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let ok = TrainerConfig::default();
        assert!(ok.validate().is_ok());
        for c in [
            TrainerConfig { k: 0, ..ok.clone() },
            TrainerConfig { batch_size: 0, ..ok.clone() },
            TrainerConfig { temperature: 0.0, ..ok.clone() },
            TrainerConfig { coreset_per_task: 0, ..ok.clone() },
            TrainerConfig { method: Method::Si, xi: 0.0, ..ok.clone() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }
}
