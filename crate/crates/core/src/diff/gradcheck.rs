//! Reverse-mode gradients against central finite differences.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diff::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Entries sampled per tensor (all entries when the tensor is smaller).
    pub max_per_tensor: usize,
    pub seed: u64,
    /// Test hook: perturb the analytic gradient of groups with this name prefix.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            max_per_tensor: 24,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub skipped: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub groups: Vec<GroupReport>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| !g.skipped)
            .map(|g| g.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| !g.pass)
    }
}

/// Compare reverse-mode and finite-difference gradients of `f` per parameter tensor.
///
/// The error of one entry is `|a − n| / max(|a|, |n|, 1e-3·max|a|, 1e-6)`,
/// where `max|a|` runs over every checked entry of every tensor; a group passes iff its largest error
/// is at most `tol`. Frozen tensors are reported as skipped.
pub fn grad_check<F>(f: F, params: &ParamStore, tol: f64, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var>,
{
    let tape = Tape::new();
    let loss = f(&tape, params)?;
    let mut grads = tape.backward(loss)?;
    let bound: std::collections::HashMap<String, Var> = tape.bound_params().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut groups = Vec::new();
    let mut planned = Vec::new();
    for (name, entry) in params.iter() {
        if entry.frozen {
            groups.push(GroupReport {
                name: name.to_string(),
                checked: 0,
                max_rel_err: 0.0,
                skipped: true,
                pass: true,
            });
            continue;
        }
        let n = entry.tensor.len();
        let mut analytic = bound
            .get(name)
            .and_then(|&v| grads.take(v))
            .unwrap_or_else(|| vec![0.0; n]);
        let idx: Vec<usize> = if n <= opts.max_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        if let Some(p) = &opts.corrupt {
            if name.starts_with(p.as_str()) {
                if let Some(&i) = idx.first() {
                    analytic[i] += 0.1 * (1.0 + analytic[i].abs());
                }
            }
        }
        planned.push((name.to_string(), idx, analytic));
    }
    let amax = planned
        .iter()
        .flat_map(|(_, idx, a)| idx.iter().map(|&i| a[i].abs()))
        .fold(0.0, f64::max);
    let floor = (1e-3 * amax).max(1e-6);
    for (name, idx, analytic) in planned {
        let mut worst = 0.0f64;
        for &i in &idx {
            let orig = work.get(&name).unwrap().data()[i];
            let mut eval = |x: f64| -> Result<f64> {
                work.entry_mut(&name).unwrap().tensor.data_mut()[i] = x;
                let t = Tape::no_grad();
                let l = f(&t, &work)?;
                t.item(l)
            };
            let hi = eval(orig + opts.step)?;
            let lo = eval(orig - opts.step)?;
            work.entry_mut(&name).unwrap().tensor.data_mut()[i] = orig;
            let num = (hi - lo) / (2.0 * opts.step);
            let a = analytic[i];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            worst = worst.max(err);
        }
        groups.push(GroupReport {
            name,
            checked: idx.len(),
            max_rel_err: worst,
            skipped: false,
            pass: worst <= tol,
        });
    }
    groups.sort_by(|a, b| a.name.cmp(&b.name));
    let pass = groups.iter().all(|g| g.pass);
    Ok(GradCheckReport { tol, groups, pass })
}
