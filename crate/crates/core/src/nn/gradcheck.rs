use rand::seq::index::sample;

use super::{NnError, Parameterized};
use crate::util::{rng_for, Fnv64};

/// Loss value plus a hash of the activation pattern that produced it. Two
/// evaluations with different signatures straddle a kink of the piecewise
/// linear network, where central differences are meaningless.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub signature: u64,
}

impl LossEval {
    pub fn smooth(value: f64) -> Self {
        LossEval {
            value,
            signature: 0,
        }
    }

    /// Signature over the signs of the given pre-activations.
    pub fn with_activations(value: f64, pre: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Fnv64::new();
        let mut bits = 0u64;
        let mut n = 0;
        for z in pre {
            bits = (bits << 1) | u64::from(z > 0.0);
            n += 1;
            if n == 64 {
                h.write_u64(bits);
                bits = 0;
                n = 0;
            }
        }
        h.write_u64(bits);
        h.write_u64(n);
        LossEval {
            value,
            signature: h.finish(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `name[index]` of the coordinate with the largest relative error.
    pub worst: Option<String>,
}

const REL_FLOOR: f64 = 1e-6;

fn coordinate(p: &mut impl Parameterized, k: usize, f: impl FnOnce(&mut f64)) {
    let mut f = Some(f);
    let mut offset = 0;
    p.visit_mut(&mut |_, t| {
        if k >= offset && k < offset + t.len() {
            if let Some(f) = f.take() {
                f(&mut t.data[k - offset]);
            }
        }
        offset += t.len();
    });
}

fn coordinate_value(p: &impl Parameterized, k: usize) -> (String, f64) {
    let mut out = (String::new(), f64::NAN);
    let mut offset = 0;
    p.visit(&mut |name, t| {
        if k >= offset && k < offset + t.len() {
            out = (format!("{name}[{}]", k - offset), t.data[k - offset]);
        }
        offset += t.len();
    });
    out
}

/// Compares `analytic` with central differences of `eval` on at most
/// `max_coords` coordinates, sampled with `seed` when there are more.
/// Relative error is `|a - n| / max(|a| + |n|, 1e-6)`. `params` is restored.
pub fn grad_check<P, F>(
    params: &mut P,
    eval: F,
    analytic: &P,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError>
where
    P: Parameterized,
    F: Fn(&P) -> LossEval,
{
    let total = params.param_count();
    if analytic.param_count() != total {
        return Err(NnError::Dimension(format!(
            "{} parameters but {} gradient entries",
            total,
            analytic.param_count()
        )));
    }
    let coords: Vec<usize> = if max_coords >= total {
        (0..total).collect()
    } else {
        let mut rng = rng_for(seed, &[0x6772_6164]);
        let mut v = sample(&mut rng, total, max_coords).into_vec();
        v.sort_unstable();
        v
    };

    let base = eval(params);
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
    };
    for k in coords {
        let (name, original) = coordinate_value(params, k);
        coordinate(params, k, |v| *v = original + eps);
        let plus = eval(params);
        coordinate(params, k, |v| *v = original - eps);
        let minus = eval(params);
        coordinate(params, k, |v| *v = original);
        if plus.signature != base.signature || minus.signature != base.signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * eps);
        let (_, a) = coordinate_value(analytic, k);
        if !numeric.is_finite() || !a.is_finite() {
            return Err(NnError::NonFinite(name));
        }
        let abs = (a - numeric).abs();
        let rel = abs / (a.abs() + numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(name);
        }
    }
    Ok(report)
}
