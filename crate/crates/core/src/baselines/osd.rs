//! Ordered-statistics post-processing of BP soft output.

use crate::error::{Error, Result};
use crate::gf2::{BinaryMatrix, BinaryVector, PivotSolver};

/// Highest combination-sweep order accepted.
pub const MAX_OSD_ORDER: usize = 3;

/// Columns ranked by decreasing flip likelihood (ascending LLR), ties by
/// index.
pub fn reliability_order(llrs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..llrs.len()).collect();
    order.sort_by(|&a, &b| llrs[a].total_cmp(&llrs[b]));
    order
}

fn check_solution(h: &BinaryMatrix, e: &BinaryVector, s: &BinaryVector) -> Result<()> {
    if &h.matvec(e)? != s {
        return Err(Error::Infeasible);
    }
    Ok(())
}

/// OSD-0: solve `H·e = s` on the most-likely-flipped column basis.
pub fn osd0(
    h: &BinaryMatrix,
    priors: &[f64],
    llrs: &[f64],
    s: &BinaryVector,
) -> Result<BinaryVector> {
    osd_cs(h, priors, llrs, s, 0)
}

fn soft_weight(e: &BinaryVector, costs: &[f64]) -> f64 {
    e.iter_ones().map(|j| costs[j]).sum()
}

/// Combination-sweep OSD. Order 0 is plain OSD-0; order `w > 0` also tries
/// every single flip of a non-basis column and every pair among the first
/// `w` non-basis columns in reliability order, keeping the candidate of
/// least `Σ ln((1−p_j)/p_j)`.
pub fn osd_cs(
    h: &BinaryMatrix,
    priors: &[f64],
    llrs: &[f64],
    s: &BinaryVector,
    order: usize,
) -> Result<BinaryVector> {
    if order > MAX_OSD_ORDER {
        return Err(Error::config(format!(
            "OSD order {order} exceeds {MAX_OSD_ORDER}"
        )));
    }
    if llrs.len() != h.cols() || priors.len() != h.cols() {
        return Err(Error::Model(
            "OSD needs one prior and one LLR per column".into(),
        ));
    }
    let ranking = reliability_order(llrs);
    let solver = PivotSolver::new(h, &ranking)?;
    let base = solver.solve(s)?.ok_or(Error::Infeasible)?;
    check_solution(h, &base, s)?;
    if order == 0 {
        return Ok(base);
    }
    let costs: Vec<f64> = priors.iter().map(|p| ((1.0 - p) / p).ln()).collect();
    let mut is_pivot = vec![false; h.cols()];
    for &c in solver.pivots() {
        is_pivot[c] = true;
    }
    let free: Vec<usize> = ranking.into_iter().filter(|&c| !is_pivot[c]).collect();
    let mut flips: Vec<Vec<usize>> = free.iter().map(|&c| vec![c]).collect();
    let head = &free[..order.min(free.len())];
    for (i, &a) in head.iter().enumerate() {
        for &b in &head[i + 1..] {
            flips.push(vec![a, b]);
        }
    }
    let mut best = (soft_weight(&base, &costs), base);
    for flip in flips {
        let fixed = BinaryVector::from_support(h.cols(), &flip);
        let residual = s.xor(&h.matvec(&fixed)?)?;
        let Some(mut e) = solver.solve(&residual)? else {
            continue;
        };
        e.xor_assign(&fixed)?;
        let w = soft_weight(&e, &costs);
        if w < best.0 {
            best = (w, e);
        }
    }
    check_solution(h, &best.1, s)?;
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> BinaryMatrix {
        let mut m = BinaryMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, rng.random_bool(0.3));
            }
        }
        m
    }

    #[test]
    fn identity_returns_syndrome() {
        let h = BinaryMatrix::identity(5);
        let s = BinaryVector::from_bits(&[1, 0, 1, 1, 0]);
        let e = osd0(&h, &[0.1; 5], &[2.0; 5], &s).unwrap();
        assert_eq!(e, s);
    }

    #[test]
    fn infeasible_system_is_reported() {
        let h = BinaryMatrix::from_rows(&[[1u8, 1], [1, 1]]).unwrap();
        let s = BinaryVector::from_bits(&[1, 0]);
        assert!(matches!(
            osd0(&h, &[0.1; 2], &[1.0; 2], &s),
            Err(Error::Infeasible)
        ));
        assert!(osd_cs(&h, &[0.1; 2], &[1.0; 2], &s, 4).is_err());
    }

    #[test]
    fn solutions_satisfy_syndrome_and_sweep_never_worsens() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ranked = 0.0;
        let mut naive = 0.0;
        for _ in 0..300 {
            let h = random_matrix(&mut rng, 10, 20);
            let priors: Vec<f64> = (0..20).map(|_| rng.random_range(0.01..0.2)).collect();
            let e_true = BinaryVector::from_bools(
                &(0..20)
                    .map(|j| rng.random_bool(priors[j]))
                    .collect::<Vec<_>>(),
            );
            let s = h.matvec(&e_true).unwrap();
            let llrs: Vec<f64> = priors.iter().map(|p| ((1.0 - p) / p).ln()).collect();
            let e0 = osd0(&h, &priors, &llrs, &s).unwrap();
            assert_eq!(h.matvec(&e0).unwrap(), s);
            let first = crate::gf2::solve_with_pivots(&h, &s, &(0..20).collect::<Vec<_>>())
                .unwrap()
                .unwrap();
            ranked += e0.weight() as f64;
            naive += first.weight() as f64;
            let costs: Vec<f64> = llrs.clone();
            for w in 1..=3 {
                let e = osd_cs(&h, &priors, &llrs, &s, w).unwrap();
                assert_eq!(h.matvec(&e).unwrap(), s);
                assert!(soft_weight(&e, &costs) <= soft_weight(&e0, &costs) + 1e-12);
            }
        }
        assert!(ranked <= naive, "ranked {ranked} naive {naive}");
    }
}
