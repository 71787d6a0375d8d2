use super::LinearModelParams;

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..d).map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum()).collect())
        .collect()
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Plug-in ATE of a per-interval linear model under ±1 action coding:
///
/// `(2/M) Σ_m γ_m + (2/M) Σ_{m≥2} β_mᵀ Σ_{k<m} (Φ_{m-1} ⋯ Φ_{k+1}) Γ_k`,
///
/// with the empty product equal to the identity.
pub fn ate_plugin(params: &LinearModelParams) -> f64 {
    let m_total = params.intervals.len();
    if m_total == 0 {
        return 0.0;
    }
    let d = params.dim();
    let scale = 2.0 / m_total as f64;
    let direct: f64 = params.intervals.iter().map(|p| p.gamma).sum();
    let mut carry = 0.0;
    // 0-based: interval m receives the effect of every earlier interval k.
    for m in 1..m_total {
        let mut acc = vec![0.0; d];
        for k in 0..m {
            // Φ_{m-1} Φ_{m-2} ⋯ Φ_{k+1}, folded left to right.
            let mut prod = identity(d);
            for j in ((k + 1)..m).rev() {
                prod = mat_mul(&prod, &params.intervals[j].transition);
            }
            let term = mat_vec(&prod, &params.intervals[k].carryover);
            for (a, t) in acc.iter_mut().zip(term) {
                *a += t;
            }
        }
        carry += params.intervals[m].beta.iter().zip(&acc).map(|(b, a)| b * a).sum::<f64>();
    }
    scale * (direct + carry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::IntervalParams;
    use nalgebra::{Matrix2, Vector2};

    fn setting_one(m: usize) -> LinearModelParams {
        LinearModelParams::stationary(
            m,
            IntervalParams {
                alpha: 0.0,
                beta: vec![0.6, 0.2],
                gamma: 0.2,
                phi: vec![0.0, 0.0],
                transition: vec![vec![0.5, 0.1], vec![0.0, 0.6]],
                carryover: vec![0.1, 0.05],
            },
        )
        .unwrap()
    }

    /// Independent route: stationary closed form with matrix powers.
    fn matrix_power_oracle(m: usize) -> f64 {
        let beta = Vector2::new(0.6, 0.2);
        let phi = Matrix2::new(0.5, 0.1, 0.0, 0.6);
        let gam = Vector2::new(0.1, 0.05);
        let mut total = 2.0 * 0.2;
        for mm in 2..=m {
            let mut acc = Vector2::zeros();
            for k in 1..mm {
                acc += phi.pow((mm - 1 - k) as u32) * gam;
            }
            total += 2.0 / m as f64 * beta.dot(&acc);
        }
        total
    }

    #[test]
    fn setting_one_value() {
        let v = ate_plugin(&setting_one(4));
        assert!((v - matrix_power_oracle(4)).abs() < 1e-14);
        assert!((v - 0.55495).abs() < 1e-12, "{v}");
        for m in [1, 2, 7, 24] {
            assert!((ate_plugin(&setting_one(m)) - matrix_power_oracle(m)).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_cases() {
        let mut p = setting_one(4);
        for i in &mut p.intervals {
            i.gamma = 0.0;
            i.carryover = vec![0.0, 0.0];
        }
        assert_eq!(ate_plugin(&p), 0.0);
        let mut one = setting_one(1);
        one.intervals[0].gamma = 0.2;
        assert!((ate_plugin(&one) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn linear_in_effects() {
        // Nonstationary transitions exercise the product ordering.
        let mut p = setting_one(5);
        for (i, iv) in p.intervals.iter_mut().enumerate() {
            iv.transition = vec![vec![0.3 + 0.1 * i as f64, -0.2], vec![0.15, 0.4 - 0.05 * i as f64]];
        }
        let base = ate_plugin(&p);
        let mut q = p.clone();
        q.intervals[1].carryover[0] += 1.0;
        let mut r = p.clone();
        r.intervals[1].carryover[0] += 2.0;
        let (d1, d2) = (ate_plugin(&q) - base, ate_plugin(&r) - base);
        assert!((d2 - 2.0 * d1).abs() < 1e-12);
        let mut g = p.clone();
        g.intervals[3].gamma += 0.5;
        assert!((ate_plugin(&g) - base - 2.0 / 5.0 * 0.5).abs() < 1e-12);
    }
}
