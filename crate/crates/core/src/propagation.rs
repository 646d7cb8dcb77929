//! Sound bound propagation: interval bound propagation (IBP) and
//! back-substitution of linear relaxations (CROWN-style).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interval::{iv_affine, Interval, IntervalTensor, Matrix};
use crate::model::{leaky_relu, Network, Op};

/// Linear lower and upper envelope of an activation over `[l, u]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearRelaxation {
    pub lower_slope: f64,
    pub lower_intercept: f64,
    pub upper_slope: f64,
    pub upper_intercept: f64,
}

impl LinearRelaxation {
    pub fn lower(&self, x: f64) -> f64 {
        self.lower_slope * x + self.lower_intercept
    }

    pub fn upper(&self, x: f64) -> f64 {
        self.upper_slope * x + self.upper_intercept
    }

    fn exact(slope: f64) -> Self {
        Self {
            lower_slope: slope,
            lower_intercept: 0.0,
            upper_slope: slope,
            upper_intercept: 0.0,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Validation(format!("LeakyReLU slope {alpha} outside [0, 1]")))
    }
}

/// Minimum-area relaxation of `LeakyReLU_alpha` on `[l, u]`.
///
/// Unstable neurons get the chord as upper line and a lower line through
/// the origin with slope `alpha` when `u < |l|`, else slope 1.
pub fn relax_leakyrelu(l: f64, u: f64, alpha: f64) -> Result<LinearRelaxation> {
    if l > u || l.is_nan() || u.is_nan() {
        return Err(Error::InvalidInterval { lo: l, hi: u });
    }
    check_alpha(alpha)?;
    if u <= 0.0 {
        return Ok(LinearRelaxation::exact(alpha));
    }
    if l >= 0.0 {
        return Ok(LinearRelaxation::exact(1.0));
    }
    let upper_slope = (u - alpha * l) / (u - l);
    let upper_intercept = (alpha - 1.0) * l * u / (u - l);
    let lower_slope = if u < -l { alpha } else { 1.0 };
    Ok(LinearRelaxation {
        lower_slope,
        lower_intercept: 0.0,
        upper_slope,
        upper_intercept,
    })
}

/// Area between the chord and a lower line of slope `alpha_t` through the
/// origin, for an unstable neuron.
pub fn relaxation_area(l: f64, u: f64, alpha: f64, alpha_t: f64) -> Result<f64> {
    if !(l < 0.0 && 0.0 < u) {
        return Err(Error::Validation(format!("relaxation area needs l < 0 < u, got [{l}, {u}]")));
    }
    check_alpha(alpha)?;
    if !(alpha <= alpha_t && alpha_t <= 1.0) {
        return Err(Error::Validation(format!(
            "lower slope {alpha_t} outside [{alpha}, 1]"
        )));
    }
    let upper = -0.5 * l * u * (1.0 - alpha);
    Ok(upper + 0.5 * l * l * (alpha_t - alpha) + 0.5 * u * u * (1.0 - alpha_t))
}

fn check_input(net: &Network, input: &IntervalTensor) -> Result<()> {
    if input.len() != net.input_len() {
        return Err(Error::shape(
            format!("{} inputs ({:?})", net.input_len(), net.input_shape()),
            format!("{} ({:?})", input.len(), input.shape()),
        ));
    }
    Ok(())
}

/// Interval bounds after every layer, shaped like the layer outputs.
pub fn ibp_forward(net: &Network, input: &IntervalTensor) -> Result<Vec<IntervalTensor>> {
    check_input(net, input)?;
    let mut cur = input.clone().reshape(vec![input.len()])?;
    let mut out = Vec::with_capacity(net.ops().len());
    for (op, shape) in net.ops().iter().zip(net.shapes()) {
        cur = match op {
            Op::Affine { weights, bias } => iv_affine(weights, bias, &cur)?,
            Op::LeakyRelu { alpha } => {
                let a = *alpha;
                cur.map_monotone(|x| leaky_relu(x, a), crate::interval::Monotonicity::Increasing)
            }
            Op::Reshape => cur,
        };
        out.push(cur.clone().reshape(shape.clone())?);
    }
    Ok(out)
}

/// Output bounds of the form `A x + c` over the network input `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicBounds {
    pub lower: Matrix,
    pub lower_offset: Vec<f64>,
    pub upper: Matrix,
    pub upper_offset: Vec<f64>,
}

impl SymbolicBounds {
    pub fn n_outputs(&self) -> usize {
        self.lower.rows()
    }

    /// Concrete bounds over an input box.
    pub fn concretize_box(&self, input: &IntervalTensor) -> Result<IntervalTensor> {
        if input.len() != self.lower.cols() {
            return Err(Error::shape(self.lower.cols(), input.len()));
        }
        let (xl, xu) = (input.lo(), input.hi());
        let bound = |a: &Matrix, c: &[f64], r: usize, upper: bool| {
            let mut acc = c[r];
            for (j, &w) in a.row(r).iter().enumerate() {
                acc += if (w >= 0.0) == upper { w * xu[j] } else { w * xl[j] };
            }
            acc
        };
        self.collect(|r| (bound(&self.lower, &self.lower_offset, r, false), bound(&self.upper, &self.upper_offset, r, true)))
    }

    /// Concrete bounds over the segment `{ base + t * dir : t in t_range }`.
    /// Exact for each linear bound, so never looser than boxing the segment.
    pub fn concretize_affine(&self, base: &[f64], dir: &[f64], t_range: Interval) -> Result<IntervalTensor> {
        let n = self.lower.cols();
        if base.len() != n || dir.len() != n {
            return Err(Error::shape(n, format!("base {} / direction {}", base.len(), dir.len())));
        }
        let line = |a: &Matrix, c: &[f64], r: usize| {
            let row = a.row(r);
            let at_base: f64 = row.iter().zip(base).map(|(w, x)| w * x).sum::<f64>() + c[r];
            let slope: f64 = row.iter().zip(dir).map(|(w, d)| w * d).sum();
            let (p, q) = (slope * t_range.lo(), slope * t_range.hi());
            (at_base + p.min(q), at_base + p.max(q))
        };
        self.collect(|r| (line(&self.lower, &self.lower_offset, r).0, line(&self.upper, &self.upper_offset, r).1))
    }

    fn collect(&self, f: impl Fn(usize) -> (f64, f64)) -> Result<IntervalTensor> {
        let n = self.n_outputs();
        let (mut lo, mut hi) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for r in 0..n {
            let (a, b) = f(r);
            // Both sides are sound; rounding can cross them on point inputs.
            lo.push(a.min(b));
            hi.push(a.max(b));
        }
        IntervalTensor::new(vec![n], lo, hi)
    }
}

/// Composes per-neuron relaxations backward from the output to the input.
/// Relaxations are instantiated from the IBP bounds of each activation's
/// pre-activation.
pub fn symbolic_bounds(net: &Network, input: &IntervalTensor) -> Result<SymbolicBounds> {
    check_input(net, input)?;
    let ibp = ibp_forward(net, input)?;
    let n_out = net.output_len();
    let mut lower = Matrix::identity(n_out);
    let mut upper = Matrix::identity(n_out);
    let mut lower_offset = vec![0.0; n_out];
    let mut upper_offset = vec![0.0; n_out];

    for (k, op) in net.ops().iter().enumerate().rev() {
        match op {
            Op::Affine { weights, bias } => {
                for (lam, off) in [(&lower, &mut lower_offset), (&upper, &mut upper_offset)] {
                    for (r, o) in off.iter_mut().enumerate() {
                        *o += lam.row(r).iter().zip(bias).map(|(l, b)| l * b).sum::<f64>();
                    }
                }
                lower = lower.matmul(weights);
                upper = upper.matmul(weights);
            }
            Op::LeakyRelu { alpha } => {
                let pre = if k == 0 { input } else { &ibp[k - 1] };
                let relax = pre
                    .iter()
                    .map(|iv| relax_leakyrelu(iv.lo(), iv.hi(), *alpha))
                    .collect::<Result<Vec<_>>>()?;
                substitute(&mut lower, &mut lower_offset, &relax, false);
                substitute(&mut upper, &mut upper_offset, &relax, true);
            }
            Op::Reshape => {}
        }
    }
    Ok(SymbolicBounds {
        lower,
        lower_offset,
        upper,
        upper_offset,
    })
}

/// Replaces an activation by its relaxation in `lam · act(z) + off`.
/// A coefficient takes the line that keeps the bound sound: for an upper
/// bound, non-negative coefficients take the upper line.
fn substitute(lam: &mut Matrix, off: &mut [f64], relax: &[LinearRelaxation], upper: bool) {
    for (r, o) in off.iter_mut().enumerate() {
        for (w, rl) in lam.row_mut(r).iter_mut().zip(relax) {
            let (s, c) = if (*w >= 0.0) == upper {
                (rl.upper_slope, rl.upper_intercept)
            } else {
                (rl.lower_slope, rl.lower_intercept)
            };
            *o += *w * c;
            *w *= s;
        }
    }
}

/// Output bounds by back-substitution, concretized against the input box.
pub fn backsubstitute(net: &Network, input: &IntervalTensor) -> Result<IntervalTensor> {
    symbolic_bounds(net, input)?.concretize_box(input)
}
