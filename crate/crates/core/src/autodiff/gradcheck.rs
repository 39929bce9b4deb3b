//! Central finite-difference validation of tape gradients.

use ndarray::Array2;

use super::{AdError, AdResult, Tape, Var};

fn evaluate<F>(f: &F, point: &[Array2<f64>]) -> AdResult<f64>
where
    F: Fn(&mut Tape, &[Var]) -> AdResult<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.shape(out);
    if shape != (1, 1) {
        return Err(AdError::NonScalarLoss(shape));
    }
    Ok(tape.scalar(out))
}

/// `(f(x + eps) - f(x - eps)) / 2 eps` for every component of every input.
pub fn numeric_gradient<F>(f: &F, point: &[Array2<f64>], eps: f64) -> AdResult<Vec<Array2<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> AdResult<Var>,
{
    let mut probe: Vec<Array2<f64>> = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut grad = Array2::zeros(point[i].dim());
        for (idx, g) in grad.indexed_iter_mut() {
            let orig = probe[i][idx];
            probe[i][idx] = orig + eps;
            let plus = evaluate(f, &probe)?;
            probe[i][idx] = orig - eps;
            let minus = evaluate(f, &probe)?;
            probe[i][idx] = orig;
            *g = (plus - minus) / (2.0 * eps);
            if !g.is_finite() {
                return Err(AdError::NonFinite { op: "grad_check" });
            }
        }
        out.push(grad);
    }
    Ok(out)
}

/// Maximum componentwise relative error between backpropagated and
/// finite-difference gradients. The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, point: &[Array2<f64>], eps: f64) -> AdResult<f64>
where
    F: Fn(&mut Tape, &[Var]) -> AdResult<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let numeric = numeric_gradient(&f, point, eps)?;

    let mut worst = 0.0_f64;
    for (v, num) in vars.iter().zip(&numeric) {
        let analytic = grads.wrt(&tape, *v);
        for (a, n) in analytic.iter().zip(num.iter()) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn square_at_three() {
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[array![[3.0]]],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn bce_of_sigmoid_logit_zero() {
        // d/dz BCE(sigmoid(z), 1) = sigmoid(z) - 1 = -0.5 at z = 0
        let f = |t: &mut Tape, v: &[Var]| {
            let y = t.constant(array![[1.0]]);
            t.bce_with_logits(v[0], y)
        };
        let mut tape = Tape::new();
        let z = tape.param(array![[0.0]]);
        let l = f(&mut tape, &[z]).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(&tape, z)[[0, 0]], -0.5);
        let err = grad_check(f, &[array![[0.0]]], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    /// Every primitive checked at random points in [-2, 2].
    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-5;
        type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> AdResult<Var>>;
        let mut cases: Vec<(&str, Vec<Array2<f64>>, Loss)> = Vec::new();
        let w = random(&mut rng, 3, 2);
        let weight = |t: &mut Tape, x: Var, w: &Array2<f64>| -> AdResult<Var> {
            let c = t.constant(w.clone());
            let m = t.mul(x, c)?;
            t.sum(m)
        };
        {
            let w = random(&mut rng, 3, 4);
            cases.push((
                "matmul",
                vec![random(&mut rng, 3, 2), random(&mut rng, 2, 4)],
                Box::new(move |t, v| {
                    let y = t.matmul(v[0], v[1])?;
                    weight(t, y, &w)
                }),
            ));
        }
        {
            let w = w.clone();
            cases.push((
                "add_sub",
                vec![random(&mut rng, 3, 2), random(&mut rng, 3, 2)],
                Box::new(move |t, v| {
                    let a = t.add(v[0], v[1])?;
                    let b = t.sub(a, v[1])?;
                    let c = t.mul(b, v[1])?;
                    weight(t, c, &w)
                }),
            ));
        }
        {
            let w = w.clone();
            cases.push((
                "add_row_scale",
                vec![random(&mut rng, 3, 2), random(&mut rng, 1, 2)],
                Box::new(move |t, v| {
                    let a = t.add_row(v[0], v[1])?;
                    let b = t.scale(a, -1.7)?;
                    weight(t, b, &w)
                }),
            ));
        }
        {
            let w = random(&mut rng, 5, 2);
            let w2 = random(&mut rng, 3, 4);
            cases.push((
                "concat",
                vec![random(&mut rng, 3, 2), random(&mut rng, 2, 2)],
                Box::new(move |t, v| {
                    let r = t.concat_rows(&[v[0], v[1]])?;
                    let a = weight(t, r, &w)?;
                    let c = t.concat_cols(&[v[0], v[0]])?;
                    let b = weight(t, c, &w2)?;
                    t.add(a, b)
                }),
            ));
        }
        {
            let w = random(&mut rng, 4, 2);
            let w2 = random(&mut rng, 2, 2);
            cases.push((
                "gather_scatter",
                vec![random(&mut rng, 3, 2)],
                Box::new(move |t, v| {
                    let g = t.gather_rows(v[0], &[2, 0, 2, 1])?;
                    let a = weight(t, g, &w)?;
                    let sc = t.scatter_add_rows(v[0], &[1, 1, 0], 2)?;
                    let sq = t.mul(sc, sc)?;
                    let b = weight(t, sq, &w2)?;
                    t.add(a, b)
                }),
            ));
        }
        {
            let w = random(&mut rng, 6, 1);
            cases.push((
                "segment_softmax",
                vec![random(&mut rng, 6, 1)],
                Box::new(move |t, v| {
                    let a = t.segment_softmax(v[0], &[4, 1, 4, 4, 9, 1])?;
                    weight(t, a, &w)
                }),
            ));
        }
        {
            let w = w.clone();
            cases.push((
                "leaky_relu_sigmoid",
                vec![random(&mut rng, 3, 2)],
                Box::new(move |t, v| {
                    let a = t.leaky_relu(v[0], 0.2)?;
                    let b = t.sigmoid(a)?;
                    weight(t, b, &w)
                }),
            ));
        }
        {
            let w = w.clone();
            cases.push((
                "mul_rows",
                vec![random(&mut rng, 3, 2), random(&mut rng, 3, 1)],
                Box::new(move |t, v| {
                    let a = t.mul_rows(v[0], v[1])?;
                    weight(t, a, &w)
                }),
            ));
        }
        cases.push((
            "squared_error",
            vec![random(&mut rng, 3, 2), random(&mut rng, 3, 2)],
            Box::new(|t, v| t.squared_error(v[0], v[1])),
        ));
        {
            let y = array![[1.0], [0.0], [1.0], [0.0]];
            cases.push((
                "bce_with_logits",
                vec![random(&mut rng, 4, 1)],
                Box::new(move |t, v| {
                    let y = t.constant(y.clone());
                    t.bce_with_logits(v[0], y)
                }),
            ));
        }

        for (name, point, f) in cases {
            let err = grad_check(f, &point, eps).unwrap();
            assert!(err < 1e-6, "{name}: relative error {err}");
        }
    }
}
