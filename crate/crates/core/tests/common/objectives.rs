//! Every training objective on small networks, checked against central
//! finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seqvi::autodiff::activations::softplus_inv;
use seqvi::autodiff::{Graph, Tensor};
use seqvi::data::LabeledDataset;
use seqvi::distributions::{DiagGaussian, GaussMixture};
use seqvi::linearize::{InducingSet, InducingSource};
use seqvi::methods::{Draw, KlEstimator, Objective, PriorMoments, Quadratic, Regulariser};
use seqvi::nn::{FcnnSpec, ParamVector, Posterior};

use super::{central_diff, max_rel_err, rng, uniform_vec};

pub const H: f64 = 1e-5;
/// Gradient entries below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-3;
pub const OBJECTIVE_RTOL: f64 = 1e-4;
pub const MAX_OBJECTIVE_PARAMS: usize = 400;

pub fn small_gaussian(spec: &FcnnSpec, r: &mut ChaCha8Rng) -> DiagGaussian {
    let mu = ParamVector::he_init(spec, r).into_values();
    let rho = (0..mu.len()).map(|_| softplus_inv(r.random_range(0.05..0.3))).collect();
    DiagGaussian::new(mu, rho).unwrap()
}

pub fn small_mixture(spec: &FcnnSpec, k: usize, r: &mut ChaCha8Rng) -> GaussMixture {
    let lambda = uniform_vec(r, k, -0.5, 0.5);
    GaussMixture::new(lambda, (0..k).map(|_| small_gaussian(spec, r)).collect()).unwrap()
}

fn batch(spec: &FcnnSpec, rows: usize, r: &mut ChaCha8Rng) -> LabeledDataset {
    let classes = spec.num_classes();
    let labels = (0..rows).map(|i| i % classes).collect();
    LabeledDataset::new(Tensor::matrix(rows, 2, uniform_vec(r, rows * 2, -2.0, 2.0)).unwrap(), labels).unwrap()
}

fn inducing(n: usize, r: &mut ChaCha8Rng) -> InducingSet {
    InducingSet::new(
        Tensor::matrix(n, 2, uniform_vec(r, n * 2, -2.0, 2.0)).unwrap(),
        InducingSource::GeneratedUniform,
    )
    .unwrap()
}

fn draws(layout: &Posterior, n: usize, r: &mut ChaCha8Rng) -> Vec<Draw> {
    let mut gumbel = rng(r.random());
    (0..n).map(|_| Draw::sample(layout, r, &mut gumbel)).collect()
}

/// Worst relative error of the total, NLL and regulariser gradients.
pub struct Check {
    pub name: String,
    pub params: usize,
    pub worst: [f64; 3],
}

fn check(name: String, obj: &Objective<'_>) -> Check {
    let phi0 = obj.layout.to_flat();
    let term = |which: usize, p: &[f64]| {
        let g = Graph::new();
        let t = obj.eval(g.leaf(Tensor::vector(p.to_vec()))).unwrap();
        [t.total, t.nll, t.reg][which].item()
    };
    let mut worst = [0.0; 3];
    for (which, w) in worst.iter_mut().enumerate() {
        let g = Graph::new();
        let leaf = g.leaf(Tensor::vector(phi0.clone()));
        let t = obj.eval(leaf).unwrap();
        let y = [t.total, t.nll, t.reg][which];
        let analytic = g.grad(y, &[leaf]).unwrap()[0].value().data().to_vec();
        let numeric = central_diff(|p| term(which, p), &phi0, H);
        *w = max_rel_err(&analytic, &numeric, FLOOR);
    }
    Check {
        name,
        params: phi0.len(),
        worst,
    }
}

fn pkl(prior: &Posterior) -> Regulariser<'_> {
    Regulariser::ParamKl {
        prior,
        estimator: KlEstimator::UpperBound,
        mc_draws: vec![],
    }
}

fn fkl<'a>(spec: &FcnnSpec, prior: &Posterior, ind: &InducingSet) -> Regulariser<'a> {
    Regulariser::FunctionKl {
        prior: PriorMoments::compute(spec, prior, ind).unwrap(),
        inducing: ind.clone(),
    }
}

fn with_kl<'a>(base: &Objective<'a>, regulariser: Regulariser<'a>) -> Objective<'a> {
    Objective {
        regulariser,
        ..base.clone()
    }
}

/// Parameter- and function-space VFEs (Gaussian and mixture, prior- and
/// likelihood-focused) plus the MAP objective with quadratic penalties,
/// for a multiclass and a binary head.
pub fn all_objectives() -> Vec<Check> {
    let mut out = vec![];
    for (heads, seed) in [(3usize, 41u64), (1, 42)] {
        let head = if heads == 1 { "binary" } else { "multiclass" };
        let spec = FcnnSpec::new(2, vec![8], heads).unwrap();
        let n = spec.num_params();
        let r = &mut rng(seed);
        let ind = inducing(5, r);
        let current = batch(&spec, 4, r);
        let replay = batch(&spec, 4, r);
        let joint = LabeledDataset::concat(&[&current, &replay]).unwrap();

        // Gaussian family.
        let layout = Posterior::Gaussian(small_gaussian(&spec, r));
        let earlier = Posterior::Gaussian(small_gaussian(&spec, r));
        let standard = Posterior::Gaussian(DiagGaussian::standard(n));
        let base = Objective {
            spec: &spec,
            layout: &layout,
            temperature: 0.1,
            batch: current.clone(),
            draws: draws(&layout, 2, r),
            regulariser: Regulariser::None,
            reg_scale: 0.05,
        };
        out.push(check(format!("p-g-vcl {head}"), &with_kl(&base, pkl(&earlier))));
        let replayed = Objective {
            batch: joint.clone(),
            ..base.clone()
        };
        out.push(check(format!("l-g-vcl {head}"), &with_kl(&replayed, pkl(&standard))));
        out.push(check(format!("p-g-sfsvi {head}"), &with_kl(&base, fkl(&spec, &earlier, &ind))));
        out.push(check(format!("l-g-sfsvi {head}"), &with_kl(&replayed, fkl(&spec, &standard, &ind))));

        // Mixture family.
        let k = if heads == 1 { 3 } else { 2 };
        let layout = Posterior::Mixture(small_mixture(&spec, k, r));
        let earlier = Posterior::Mixture(small_mixture(&spec, k, r));
        let standard = Posterior::Mixture(GaussMixture::standard(k, n));
        let mc_draws = draws(&layout, 3, r);
        let base = Objective {
            spec: &spec,
            layout: &layout,
            temperature: 0.1,
            batch: current.clone(),
            draws: draws(&layout, 2, r),
            regulariser: Regulariser::None,
            reg_scale: 0.05,
        };
        let replayed = Objective {
            batch: joint.clone(),
            ..base.clone()
        };
        out.push(check(format!("p-gm-vcl upper bound {head}"), &with_kl(&base, pkl(&earlier))));
        let mc = Regulariser::ParamKl {
            prior: &earlier,
            estimator: KlEstimator::MonteCarlo,
            mc_draws,
        };
        out.push(check(format!("p-gm-vcl monte carlo {head}"), &with_kl(&base, mc)));
        out.push(check(format!("l-gm-vcl {head}"), &with_kl(&replayed, pkl(&standard))));
        out.push(check(format!("p-gm-sfsvi {head}"), &with_kl(&base, fkl(&spec, &earlier, &ind))));
        out.push(check(format!("l-gm-sfsvi {head}"), &with_kl(&replayed, fkl(&spec, &standard, &ind))));

        // MAP with weight decay and an EWC/SI style pull.
        let point = Posterior::Point(ParamVector::he_init(&spec, r).into_values());
        let map = Objective {
            spec: &spec,
            layout: &point,
            temperature: 0.1,
            batch: joint.clone(),
            draws: vec![],
            regulariser: Regulariser::Quadratic(vec![
                Quadratic {
                    weights: vec![0.01; n],
                    anchor: vec![0.0; n],
                },
                Quadratic {
                    weights: uniform_vec(r, n, 0.0, 5.0),
                    anchor: uniform_vec(r, n, -1.0, 1.0),
                },
            ]),
            reg_scale: 1.0,
        };
        out.push(check(format!("map penalties {head}"), &map));
    }
    out
}
