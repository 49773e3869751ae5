//! Central finite-difference verification of analytic gradients.

use crate::error::{GearError, Result};
use crate::tensorcore::{Graph, Matrix, Node};

/// Per-parameter comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Relative error with the denominator floored at 1, so tiny gradients are
/// compared absolutely instead of amplifying finite-difference noise.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares the analytic gradient of `build` against central finite
/// differences, one parameter entry at a time.
///
/// `build` must construct the same scalar loss for the same parameter
/// values: it is called once for the analytic pass and twice per parameter
/// entry for the `±step` evaluations.
pub fn check_gradients<F>(
    build: F,
    params: &[(String, Matrix)],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Node]) -> Result<Node>,
{
    if step <= 0.0 {
        return Err(GearError::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }

    // Analytic pass.
    let mut g = Graph::new();
    let nodes: Vec<Node> = params.iter().map(|(_, m)| g.param(m.clone())).collect();
    let loss = build(&mut g, &nodes)?;
    g.backward(loss)?;
    let analytic: Vec<Matrix> = nodes.iter().map(|&n| g.grad(n).clone()).collect();

    // Numeric passes.
    let mut entries = Vec::with_capacity(params.len());
    let mut overall = 0.0_f64;
    let mut work: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut worst = 0.0_f64;
        for e in 0..work[pi].len() {
            let original = work[pi].data()[e];
            work[pi].data_mut()[e] = original + step;
            let plus = eval(&build, &work)?;
            work[pi].data_mut()[e] = original - step;
            let minus = eval(&build, &work)?;
            work[pi].data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_err(analytic[pi].data()[e], numeric));
        }
        overall = overall.max(worst);
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_err: worst,
        });
    }

    Ok(GradCheckReport {
        entries,
        max_rel_err: overall,
        tol,
    })
}

fn eval<F>(build: &F, values: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Node]) -> Result<Node>,
{
    let mut g = Graph::new();
    let nodes: Vec<Node> = values.iter().map(|m| g.param(m.clone())).collect();
    let loss = build(&mut g, &nodes)?;
    let shape = g.value(loss).shape();
    if shape != (1, 1) {
        return Err(GearError::NonScalarLoss {
            rows: shape.0,
            cols: shape.1,
        });
    }
    Ok(g.scalar(loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function_at_three() {
        let params = vec![("x".to_string(), Matrix::from_vec(1, 1, vec![3.0]).unwrap())];
        let report = check_gradients(
            |g, ps| {
                let x = ps[0];
                // x^2 as x * x via a 1x1 matmul.
                g.matmul(x, x)
            },
            &params,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "max err {}", report.max_rel_err);
        assert!(report.max_rel_err < 1e-8);
    }

    #[test]
    fn corrupted_backward_rule_fails() {
        // grad_scale(·, 2) doubles the analytic gradient while leaving the
        // function values (and so the numeric gradient) untouched.
        let params = vec![("x".to_string(), Matrix::from_vec(1, 1, vec![1.5]).unwrap())];
        let report = check_gradients(
            |g, ps| {
                let x = ps[0];
                let y = g.matmul(x, x)?;
                g.grad_scale(y, 2.0)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn rejects_non_positive_step() {
        let params = vec![("x".to_string(), Matrix::from_vec(1, 1, vec![1.0]).unwrap())];
        let err = check_gradients(|_g, ps| Ok(ps[0]), &params, 0.0, 1e-4);
        assert!(err.is_err());
    }

    #[test]
    fn random_matmul_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let b = Matrix::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let params = vec![("a".to_string(), a), ("b".to_string(), b)];
        let report = check_gradients(
            |g, ps| {
                let prod = g.matmul(ps[0], ps[1])?;
                let t = g.tanh(prod)?;
                g.sum(t)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max err {}", report.max_rel_err);
        assert_eq!(report.entries.len(), 2);
    }
}
