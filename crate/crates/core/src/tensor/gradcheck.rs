use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Graph, ParamStore, Real, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub rel_floor: f64,
    /// Check at most this many entries per parameter tensor (seeded sample).
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            rel_floor: 1e-6,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// Compares analytic gradients of `loss_fn` against central differences
/// `(f(θ+εe_i) - f(θ-εe_i)) / 2ε`, one parameter entry at a time.
///
/// `loss_fn` must rebuild the whole forward pass deterministically from the
/// parameters it is given.
pub fn finite_diff_check<F, E>(
    params: &ParamStore<F>,
    loss_fn: impl Fn(&mut Graph<F>, &ParamStore<F>) -> Result<Var, E>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: Real,
    E: From<TensorError>,
{
    if params.is_empty() {
        return Ok(GradCheckReport::default());
    }
    let analytic = analytic_grads(params, &loss_fn)?;
    compare(params, &analytic, &loss_fn, opts)
}

/// Backpropagates at precision `F` (typically `f32`) and checks the result
/// against central differences of `reference_fn`, the same graph built at
/// 64-bit, taken at the same point.
pub fn finite_diff_check_vs_f64<F, E>(
    params: &ParamStore<F>,
    loss_fn: impl Fn(&mut Graph<F>, &ParamStore<F>) -> Result<Var, E>,
    reference_fn: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, E>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: Real,
    E: From<TensorError>,
{
    if params.is_empty() {
        return Ok(GradCheckReport::default());
    }
    let analytic = analytic_grads(params, &loss_fn)?;
    compare(&params.cast::<f64>(), &analytic, &reference_fn, opts)
}

fn analytic_grads<F: Real, E: From<TensorError>>(
    params: &ParamStore<F>,
    loss_fn: &impl Fn(&mut Graph<F>, &ParamStore<F>) -> Result<Var, E>,
) -> Result<Gradients<F>, E> {
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    Ok(g.backward(loss)?)
}

fn compare<F, G, E>(
    params: &ParamStore<G>,
    analytic: &Gradients<F>,
    loss_fn: &impl Fn(&mut Graph<G>, &ParamStore<G>) -> Result<Var, E>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: Real,
    G: Real,
    E: From<TensorError>,
{
    let eval = |p: &ParamStore<G>| -> Result<f64, E> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, p)?;
        Ok(g.scalar(l).as_f64())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let eps = G::from_f64_lossy(opts.eps);
    let mut report = GradCheckReport::default();
    for id in params.ids() {
        let n = params.get(id).len();
        let indices: Vec<usize> = match opts.max_entries_per_param {
            Some(limit) if limit < n => {
                let mut v = sample(&mut rng, n, limit).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let grad = analytic.get(id);
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            checked: 0,
            max_rel_err: 0.0,
            worst_index: None,
        };
        for i in indices {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;

            // the actual step after rounding
            let h = ((orig + eps) - (orig - eps)).as_f64();
            let numeric = (plus - minus) / h;
            let a = grad.map_or(0.0, |g| g[i].as_f64());
            let denom = a.abs().max(numeric.abs()).max(opts.rel_floor);
            let rel = (a - numeric).abs() / denom;
            check.checked += 1;
            if rel > check.max_rel_err || check.worst_index.is_none() {
                check.max_rel_err = rel;
                check.worst_index = Some(i);
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
