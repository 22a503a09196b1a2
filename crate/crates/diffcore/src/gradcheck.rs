use crate::{Graph, ParamStore, Result, Var};

/// Something with parameters and a scalar loss, evaluated in `f64`.
pub trait Objective {
    fn params(&self) -> &ParamStore<f64>;
    fn params_mut(&mut self) -> &mut ParamStore<f64>;
    /// Records the loss on `graph`. Must be deterministic between calls.
    fn loss(&mut self, graph: &mut Graph<f64>) -> Result<Var>;
}

/// Adapts a closure over a parameter store into an [`Objective`].
pub struct FnObjective<F> {
    pub store: ParamStore<f64>,
    pub f: F,
}

impl<F> FnObjective<F>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    pub fn new(store: ParamStore<f64>, f: F) -> Self {
        FnObjective { store, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
    fn loss(&mut self, graph: &mut Graph<f64>) -> Result<Var> {
        (self.f)(graph, &self.store)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn eval(obj: &mut impl Objective) -> Result<f64> {
    let mut g = Graph::new();
    let l = obj.loss(&mut g)?;
    g.value(l).item()
}

/// Compares backpropagated gradients against central differences.
///
/// Every coordinate is probed when there are at most `max_coords` of them,
/// otherwise a seeded sample of `max_coords` coordinates. The error of one
/// coordinate is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check(
    obj: &mut impl Objective,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    obj.params_mut().zero_grad();
    let mut g = Graph::new();
    let l = obj.loss(&mut g)?;
    let mut store = obj.params().clone();
    g.backward(l, &mut store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.to_f64_vec()).collect();

    let mut coords: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(p, v)| (0..v.len()).map(move |i| (p, i)))
        .collect();
    if coords.len() > max_coords {
        let mut s = seed;
        for i in 0..max_coords {
            let j = i + (splitmix(&mut s) % (coords.len() - i) as u64) as usize;
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
    }

    let ids: Vec<_> = obj.params().ids().collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: None,
    };
    for (p, i) in coords {
        let id = ids[p];
        let orig = obj.params().get(id).value.data()[i];
        obj.params_mut().get_mut(id).value.data_mut()[i] = orig + eps;
        let up = eval(obj)?;
        obj.params_mut().get_mut(id).value.data_mut()[i] = orig - eps;
        let down = eval(obj)?;
        obj.params_mut().get_mut(id).value.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[p][i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((obj.params().get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
