use rand::seq::SliceRandom;

use super::coreset::{make_inducing, update_coreset, Coreset, InducingMode};
use super::loss::nll_sum_var;
use super::optim::{Adam, OneCycle};
use super::{Family, KlEstimator, Method, Space, TrainerConfig};
use crate::autodiff::activations::softplus_inv;
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::LabeledDataset;
use crate::distributions::tape::{self, GaussianVars, MixtureVars};
use crate::distributions::{DiagGaussian, GaussMixture};
use crate::error::{Error, Result};
use crate::linearize::{
    fs_kl_gaussian_var, fs_kl_mixture_var, gaussian_function_moments, FunctionMoments,
    InducingSet, MixtureFunctionMoments,
};
use crate::nn::{forward_var, FcnnSpec, ParamVector, Posterior};
use crate::rng::{gumbel_vec, normal_vec, StreamRng, TrainRngs};

/// Cumulative empirical Fisher diagonal and the last task optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    pub fisher: Vec<f64>,
    pub anchor: Vec<f64>,
    /// The eFIM diagonal of each finished task, in order.
    pub per_task: Vec<Vec<f64>>,
}

/// Path-integral importances and the last task optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct SiState {
    pub omega: Vec<f64>,
    pub anchor: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainerState {
    pub spec: FcnnSpec,
    /// Variational PDF for VI methods, point estimate for MAP methods.
    pub variational: Posterior,
    /// Frozen during a task. `None` for MAP methods.
    pub prior: Option<Posterior>,
    pub coreset: Coreset,
    pub ewc: Option<EwcState>,
    pub si: Option<SiState>,
    /// Number of tasks trained so far.
    pub task_index: usize,
    /// Per-input-dimension ranges for uniform inducing points.
    pub bounds: Vec<(f64, f64)>,
    /// Objective value at every step of the most recent task.
    pub loss_trace: Vec<f64>,
}

impl TrainerState {
    /// He-initialised means. Gaussian scales start at `cfg.init_sigma`;
    /// mixture components are initialised independently with equal weights.
    /// The first prior is the standard normal (or a mixture of them).
    pub fn init(
        spec: &FcnnSpec,
        cfg: &TrainerConfig,
        bounds: Vec<(f64, f64)>,
        init_rng: &mut StreamRng,
    ) -> Result<Self> {
        cfg.validate()?;
        if bounds.len() != spec.input_dim() {
            return Err(Error::contract("bounds do not match the input width"));
        }
        let n = spec.num_params();
        let gaussian = |rng: &mut StreamRng| {
            let mu = ParamVector::he_init(spec, rng).into_values();
            DiagGaussian::new(mu, vec![softplus_inv(cfg.init_sigma); n])
        };
        let (variational, prior) = match cfg.method.family() {
            None => (Posterior::Point(ParamVector::he_init(spec, init_rng).into_values()), None),
            Some(Family::Gaussian) => (
                Posterior::Gaussian(gaussian(init_rng)?),
                Some(Posterior::Gaussian(DiagGaussian::standard(n))),
            ),
            Some(Family::Mixture) => {
                let comps = (0..cfg.k).map(|_| gaussian(init_rng)).collect::<Result<_>>()?;
                (
                    Posterior::Mixture(GaussMixture::new(vec![0.0; cfg.k], comps)?),
                    Some(Posterior::Mixture(GaussMixture::standard(cfg.k, n))),
                )
            }
        };
        Ok(TrainerState {
            spec: spec.clone(),
            variational,
            prior,
            coreset: Coreset::new(spec.input_dim()),
            ewc: (cfg.method == Method::Ewc).then(|| EwcState {
                fisher: vec![0.0; n],
                anchor: vec![0.0; n],
                per_task: vec![],
            }),
            si: (cfg.method == Method::Si).then(|| SiState {
                omega: vec![0.0; n],
                anchor: vec![0.0; n],
            }),
            task_index: 0,
            bounds,
            loss_trace: vec![],
        })
    }
}

/// Noise behind one reparameterised parameter draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    /// One standard normal vector per component.
    pub noise: Vec<Vec<f64>>,
    /// Gumbel noise for the mixture weights; empty for a Gaussian.
    pub gumbel: Vec<f64>,
}

impl Draw {
    pub fn sample(layout: &Posterior, param_rng: &mut StreamRng, gumbel_rng: &mut StreamRng) -> Draw {
        match layout {
            Posterior::Point(_) => Draw {
                noise: vec![],
                gumbel: vec![],
            },
            Posterior::Gaussian(g) => Draw {
                noise: vec![normal_vec(param_rng, g.dim())],
                gumbel: vec![],
            },
            Posterior::Mixture(m) => Draw {
                noise: (0..m.k()).map(|_| normal_vec(param_rng, m.dim())).collect(),
                gumbel: gumbel_vec(gumbel_rng, m.k()),
            },
        }
    }
}

/// Prior moments at a set of inducing points.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorMoments {
    Gaussian(FunctionMoments),
    Mixture(MixtureFunctionMoments),
}

impl PriorMoments {
    pub fn compute(spec: &FcnnSpec, prior: &Posterior, ind: &InducingSet) -> Result<Self> {
        match prior {
            Posterior::Gaussian(g) => Ok(PriorMoments::Gaussian(gaussian_function_moments(spec, g, ind)?)),
            Posterior::Mixture(m) => {
                // Components are often identical (the initial prior), so
                // linearise each distinct one once.
                let comps = m.components();
                let mut per_component: Vec<FunctionMoments> = Vec::with_capacity(comps.len());
                for (i, c) in comps.iter().enumerate() {
                    match comps[..i].iter().position(|d| d == c) {
                        Some(j) => per_component.push(per_component[j].clone()),
                        None => per_component.push(gaussian_function_moments(spec, c, ind)?),
                    }
                }
                Ok(PriorMoments::Mixture(MixtureFunctionMoments {
                    p: m.probs(),
                    per_component,
                }))
            }
            Posterior::Point(_) => Err(Error::contract("a point estimate has no function-space moments")),
        }
    }
}

/// Quadratic pull `Σ w_i (θ_i − a_i)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub weights: Vec<f64>,
    pub anchor: Vec<f64>,
}

/// The regulariser of one step's objective.
#[derive(Clone, Debug)]
pub enum Regulariser<'a> {
    None,
    ParamKl {
        prior: &'a Posterior,
        estimator: KlEstimator,
        mc_draws: Vec<Draw>,
    },
    FunctionKl {
        prior: PriorMoments,
        inducing: InducingSet,
    },
    Quadratic(Vec<Quadratic>),
}

/// One step's objective, `mean NLL + reg_scale · regulariser`, as a function
/// of the flat variational (or point) parameters.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub spec: &'a FcnnSpec,
    pub layout: &'a Posterior,
    pub temperature: f64,
    pub batch: LabeledDataset,
    /// Expectation draws; ignored for point estimates.
    pub draws: Vec<Draw>,
    pub regulariser: Regulariser<'a>,
    pub reg_scale: f64,
}

pub struct Terms<'g> {
    pub total: Var<'g>,
    /// Mean negative log likelihood over the batch and draws.
    pub nll: Var<'g>,
    pub reg: Var<'g>,
}

enum Unpacked<'g> {
    Point(Var<'g>),
    Gaussian(GaussianVars<'g>),
    Mixture(MixtureVars<'g>),
}

fn unpack<'g>(layout: &Posterior, phi: Var<'g>) -> Unpacked<'g> {
    match layout {
        Posterior::Point(_) => Unpacked::Point(phi),
        Posterior::Gaussian(g) => {
            let n = g.dim();
            Unpacked::Gaussian(GaussianVars {
                mu: phi.slice(0, n),
                rho: phi.slice(n, n),
            })
        }
        Posterior::Mixture(m) => {
            let (k, n) = (m.k(), m.dim());
            Unpacked::Mixture(MixtureVars {
                lambda: phi.slice(0, k),
                components: (0..k)
                    .map(|i| GaussianVars {
                        mu: phi.slice(k + 2 * n * i, n),
                        rho: phi.slice(k + 2 * n * i + n, n),
                    })
                    .collect(),
            })
        }
    }
}

impl Objective<'_> {
    pub fn eval<'g>(&self, phi: Var<'g>) -> Result<Terms<'g>> {
        let g = phi.graph();
        let expected = self.layout.to_flat().len();
        if phi.shape() != [expected] {
            return Err(Error::contract("parameter vector does not match the layout"));
        }
        if self.batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let q = unpack(self.layout, phi);
        let thetas: Vec<Var<'g>> = match &q {
            Unpacked::Point(t) => vec![*t],
            Unpacked::Gaussian(q) => self
                .draws
                .iter()
                .map(|d| tape::sample_gaussian(q, &d.noise[0]))
                .collect(),
            Unpacked::Mixture(q) => self
                .draws
                .iter()
                .map(|d| tape::sample_mixture(q, self.temperature, &d.noise, &d.gumbel))
                .collect(),
        };
        if thetas.is_empty() {
            return Err(Error::contract("need at least one expectation draw"));
        }
        let x = g.constant(self.batch.inputs().clone());
        let mut nll: Option<Var<'g>> = None;
        for &theta in &thetas {
            let term = nll_sum_var(forward_var(self.spec, theta, x), self.batch.labels(), self.spec.head())?;
            nll = Some(match nll {
                Some(a) => a + term,
                None => term,
            });
        }
        let nll = nll.expect("nonempty") * (1.0 / (thetas.len() * self.batch.len()) as f64);

        let reg = match (&self.regulariser, &q) {
            (Regulariser::None, _) => g.scalar(0.0),
            (Regulariser::Quadratic(terms), Unpacked::Point(theta)) => {
                let mut acc = g.scalar(0.0);
                for t in terms {
                    let d = *theta - g.vector(t.anchor.clone());
                    acc = acc + (d.square() * g.vector(t.weights.clone())).sum();
                }
                acc
            }
            (Regulariser::ParamKl { prior: Posterior::Gaussian(p), .. }, Unpacked::Gaussian(q)) => {
                tape::kl_diag_gaussian(q, &GaussianVars::constant(g, p))
            }
            (
                Regulariser::ParamKl {
                    prior: Posterior::Mixture(p),
                    estimator,
                    mc_draws,
                },
                Unpacked::Mixture(q),
            ) => {
                let p = MixtureVars::constant(g, p);
                match estimator {
                    KlEstimator::UpperBound => tape::kl_mixture_upper_bound(q, &p),
                    KlEstimator::MonteCarlo => {
                        if mc_draws.is_empty() {
                            return Err(Error::contract("Monte Carlo KL needs draws"));
                        }
                        let draws: Vec<(Vec<Vec<f64>>, Vec<f64>)> =
                            mc_draws.iter().map(|d| (d.noise.clone(), d.gumbel.clone())).collect();
                        tape::kl_mixture_mc(q, &p, self.temperature, &draws)
                    }
                }
            }
            (
                Regulariser::FunctionKl {
                    prior: PriorMoments::Gaussian(p),
                    inducing,
                },
                Unpacked::Gaussian(q),
            ) => fs_kl_gaussian_var(self.spec, q, p, inducing),
            (
                Regulariser::FunctionKl {
                    prior: PriorMoments::Mixture(p),
                    inducing,
                },
                Unpacked::Mixture(q),
            ) => fs_kl_mixture_var(self.spec, q, p, inducing),
            _ => return Err(Error::contract("regulariser does not match the variational family")),
        };
        Ok(Terms {
            total: nll + reg * self.reg_scale,
            nll,
            reg,
        })
    }
}

fn grad_of(g: &Graph, y: Var<'_>, phi: Var<'_>) -> Result<Vec<f64>> {
    Ok(g.grad(y, &[phi])?[0].value().data().to_vec())
}

/// Empirical Fisher diagonal: mean of squared per-example NLL gradients.
pub fn empirical_fisher(spec: &FcnnSpec, theta: &[f64], data: &LabeledDataset) -> Result<Vec<f64>> {
    let mut f = vec![0.0; theta.len()];
    if data.is_empty() {
        return Ok(f);
    }
    for i in 0..data.len() {
        let g = Graph::new();
        let t = g.leaf(Tensor::vector(theta.to_vec()));
        let x = g.constant(data.inputs().select_rows(&[i]));
        let nll = nll_sum_var(forward_var(spec, t, x), &data.labels()[i..=i], spec.head())?;
        for (a, gi) in f.iter_mut().zip(grad_of(&g, nll, t)?) {
            *a += gi * gi;
        }
    }
    let inv = 1.0 / data.len() as f64;
    f.iter_mut().for_each(|v| *v *= inv);
    Ok(f)
}

fn inducing_mode(method: Method, task_index: usize) -> InducingMode {
    if method.is_prior_focused() && task_index > 0 {
        InducingMode::FromCoreset
    } else {
        InducingMode::Uniform
    }
}

/// Fit one task: minimise the method's objective with Adam under the
/// one-cycle schedule, then update the coreset, the prior (prior-focused
/// methods) and the penalty accumulators (EWC, SI).
pub fn train_task(
    mut state: TrainerState,
    task: &LabeledDataset,
    cfg: &TrainerConfig,
    rngs: &mut TrainRngs,
) -> Result<TrainerState> {
    cfg.validate()?;
    if task.is_empty() {
        return Err(Error::domain("cannot train on an empty task"));
    }
    if task.dim() != state.spec.input_dim() {
        return Err(Error::contract("task inputs do not match the network"));
    }
    let method = cfg.method;
    let spec = state.spec.clone();
    let task_no = state.task_index + 1;
    let n_data = task.len();
    let eff_batch = cfg.effective_batch();
    let batches_per_epoch = n_data.div_ceil(eff_batch);
    let schedule = OneCycle::new(cfg.effective_lr(), cfg.epochs * batches_per_epoch);

    let layout = state.variational.clone();
    let mut phi = layout.to_flat();
    let mut adam = Adam::new(phi.len());
    let prior = state.prior.clone();
    let replay = method.replays() && !state.coreset.is_empty();

    let quadratics: Vec<Quadratic> = if method.is_vi() {
        vec![]
    } else {
        let mut q = vec![Quadratic {
            weights: vec![0.5 / n_data as f64; phi.len()],
            anchor: vec![0.0; phi.len()],
        }];
        if let Some(e) = &state.ewc {
            q.push(Quadratic {
                weights: e.fisher.iter().map(|f| 0.5 * cfg.lambda_reg * f).collect(),
                anchor: e.anchor.clone(),
            });
        }
        if let Some(s) = &state.si {
            q.push(Quadratic {
                weights: s.omega.iter().map(|w| cfg.lambda_reg * w).collect(),
                anchor: s.anchor.clone(),
            });
        }
        q
    };

    let fixed_inducing = match method.space() {
        Some(Space::Function) if !cfg.resample_inducing => {
            let ind = make_inducing(
                cfg.inducing_count(),
                &state.bounds,
                &state.coreset,
                inducing_mode(method, state.task_index),
                &mut rngs.inducing,
            )?;
            let pm = PriorMoments::compute(&spec, prior.as_ref().expect("VI prior"), &ind)?;
            Some((ind, pm))
        }
        _ => None,
    };

    let si_start = phi.clone();
    let mut si_path = vec![0.0; phi.len()];
    let mut trace = Vec::with_capacity(schedule.total_steps);
    let mut step = 0;
    let mut order: Vec<usize> = (0..n_data).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rngs.batches);
        for chunk in order.chunks(eff_batch) {
            let current = task.subset(chunk);
            let replayed = replay.then(|| state.coreset.sample_batch(eff_batch, &mut rngs.coreset));
            let batch = match &replayed {
                Some(r) => LabeledDataset::concat(&[&current, r])?,
                None => current,
            };
            let draws: Vec<Draw> = if method.is_vi() {
                (0..cfg.expectation_samples)
                    .map(|_| Draw::sample(&layout, &mut rngs.param_noise, &mut rngs.gumbel))
                    .collect()
            } else {
                vec![]
            };
            let rows = batch.len() as f64;
            let (regulariser, scale) = match method.space() {
                None => (Regulariser::Quadratic(quadratics.clone()), 1.0),
                Some(Space::Parameter) => {
                    let mc_draws = if layout_is_mixture(&layout) && cfg.kl_estimator == KlEstimator::MonteCarlo {
                        (0..cfg.kl_mc_samples)
                            .map(|_| Draw::sample(&layout, &mut rngs.param_noise, &mut rngs.gumbel))
                            .collect()
                    } else {
                        vec![]
                    };
                    (
                        Regulariser::ParamKl {
                            prior: prior.as_ref().expect("VI prior"),
                            estimator: cfg.kl_estimator,
                            mc_draws,
                        },
                        1.0 / (batches_per_epoch as f64 * rows),
                    )
                }
                Some(Space::Function) => {
                    let (inducing, pm) = match &fixed_inducing {
                        Some((i, p)) => (i.clone(), p.clone()),
                        None => {
                            let ind = make_inducing(
                                cfg.inducing_count(),
                                &state.bounds,
                                &state.coreset,
                                inducing_mode(method, state.task_index),
                                &mut rngs.inducing,
                            )?;
                            let pm = PriorMoments::compute(&spec, prior.as_ref().expect("VI prior"), &ind)?;
                            (ind, pm)
                        }
                    };
                    let ratio = if state.coreset.is_empty() {
                        1.0
                    } else {
                        let reference = match &replayed {
                            Some(r) => r.len(),
                            None => inducing.len(),
                        };
                        chunk.len() as f64 / reference as f64
                    };
                    (Regulariser::FunctionKl { prior: pm, inducing }, ratio / rows)
                }
            };
            let objective = Objective {
                spec: &spec,
                layout: &layout,
                temperature: cfg.temperature,
                batch,
                draws,
                regulariser,
                reg_scale: cfg.kl_weight * scale,
            };

            let g = Graph::new();
            let leaf = g.leaf(Tensor::vector(phi.clone()));
            let terms = objective.eval(leaf)?;
            let total = terms.total.item();
            if !total.is_finite() {
                return Err(Error::Divergence {
                    task: task_no,
                    step,
                    detail: format!("nll={} reg={}", terms.nll.item(), terms.reg.item()),
                });
            }
            let grad = grad_of(&g, terms.total, leaf)?;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    task: task_no,
                    step,
                    detail: format!("non-finite gradient; nll={} reg={}", terms.nll.item(), terms.reg.item()),
                });
            }
            let nll_grad = if state.si.is_some() {
                Some(grad_of(&g, terms.nll, leaf)?)
            } else {
                None
            };
            let before = nll_grad.as_ref().map(|_| phi.clone());
            adam.step(&mut phi, &grad, schedule.lr(step));
            if let (Some(gn), Some(before)) = (nll_grad, before) {
                for i in 0..phi.len() {
                    si_path[i] -= gn[i] * (phi[i] - before[i]);
                }
            }
            trace.push(total);
            step += 1;
        }
    }

    state.variational = layout.with_flat(&phi)?;
    state.coreset = update_coreset(&state.coreset, task, state.task_index, cfg.coreset_per_task, &mut rngs.coreset)?;
    if method.is_prior_focused() {
        state.prior = Some(state.variational.clone());
    }
    if let Some(e) = state.ewc.as_mut() {
        let f = empirical_fisher(&spec, &phi, task)?;
        for (a, v) in e.fisher.iter_mut().zip(&f) {
            *a += v;
        }
        e.per_task.push(f);
        e.anchor = phi.clone();
    }
    if let Some(s) = state.si.as_mut() {
        for i in 0..phi.len() {
            let d = phi[i] - si_start[i];
            s.omega[i] += (si_path[i] / (d * d + cfg.xi)).max(0.0);
        }
        s.anchor = phi.clone();
    }
    state.task_index += 1;
    state.loss_trace = trace;
    Ok(state)
}

fn layout_is_mixture(p: &Posterior) -> bool {
    matches!(p, Posterior::Mixture(_))
}
