//! Segmentation, planning and prediction losses.

use jointdrive_numerics::{Graph, Tensor, Var};
use jointdrive_sim::Vec2;

use crate::error::{CoreError, Result};

/// Mean per-pixel binary cross-entropy of `[3, H, W]` logits against 0/1 masks.
pub fn loss_seg(g: &mut Graph<'_>, logits: Var, targets: &[f64]) -> Result<Var> {
    let per_pixel = g.bce_with_logits(logits, targets)?;
    Ok(g.mean(per_pixel))
}

fn trajectory_tensor(points: &[Vec2]) -> Result<Tensor> {
    let data = points.iter().flat_map(|p| [p.x, p.y]).collect();
    Ok(Tensor::new(vec![points.len(), 2], data)?)
}

/// `Σ_t ‖p_t − p_t^gt‖₁` for a `[T, 2]` waypoint node.
pub fn loss_planning(g: &mut Graph<'_>, plan: Var, gt: &[Vec2]) -> Result<Var> {
    let t = g.shape(plan)[0];
    if t != gt.len() {
        return Err(CoreError::LengthMismatch {
            what: "planned trajectory",
            expected: gt.len(),
            got: t,
        });
    }
    let gt = g.constant(trajectory_tensor(gt)?);
    Ok(g.l1_loss(plan, gt)?)
}

/// `Σ_i Σ_t ‖p_t^i − p_t^{i,gt}‖₁` over the selected other vehicles; zero when there are none.
pub fn loss_prediction(g: &mut Graph<'_>, preds: &[Var], gts: &[Vec<Vec2>]) -> Result<Var> {
    if preds.len() != gts.len() {
        return Err(CoreError::LengthMismatch {
            what: "predicted vehicles",
            expected: gts.len(),
            got: preds.len(),
        });
    }
    let mut total = g.constant(Tensor::scalar(0.0));
    for (&p, gt) in preds.iter().zip(gts) {
        let l = loss_planning(g, p, gt)?;
        total = g.add(total, l)?;
    }
    Ok(total)
}

/// `per + λ·jpp`.
pub fn loss_total(g: &mut Graph<'_>, per: Var, jpp: Var, lambda: f64) -> Result<Var> {
    let weighted = g.scale(jpp, lambda);
    Ok(g.add(per, weighted)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointdrive_numerics::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(points: &[(f64, f64)]) -> Vec<Vec2> {
        points.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    fn node(g: &mut Graph<'_>, pts: &[Vec2]) -> Var {
        g.input(trajectory_tensor(pts).unwrap())
    }

    #[test]
    fn zero_logits_give_ln2() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.input(Tensor::zeros(&[3, 4, 5]));
        let targets: Vec<f64> = (0..60).map(|i| (i % 2) as f64).collect();
        let l = loss_seg(&mut g, logits, &targets).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_near_zero_seg_loss() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let targets: Vec<f64> = (0..48).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let logits: Vec<f64> = targets.iter().map(|&t| if t > 0.5 { 20.0 } else { -20.0 }).collect();
        let logits = g.input(Tensor::new(vec![3, 4, 4], logits).unwrap());
        let l = loss_seg(&mut g, logits, &targets).unwrap();
        assert!(g.scalar(l) < 1e-6);
    }

    #[test]
    fn seg_target_count_mismatch_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.input(Tensor::zeros(&[3, 2, 2]));
        assert!(loss_seg(&mut g, logits, &[0.0; 11]).is_err());
    }

    #[test]
    fn planning_loss_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let gt: Vec<Vec2> = (1..=10).map(|t| Vec2::new(t as f64, 0.5 * t as f64)).collect();
        let same = node(&mut g, &gt);
        let l = loss_planning(&mut g, same, &gt).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        let shifted: Vec<Vec2> = gt.iter().map(|p| Vec2::new(p.x + 1.0, p.y)).collect();
        let shifted = node(&mut g, &shifted);
        let l = loss_planning(&mut g, shifted, &gt).unwrap();
        assert!((g.scalar(l) - 10.0).abs() < 1e-12);
        assert!(matches!(
            loss_planning(&mut g, shifted, &gt[..9]),
            Err(CoreError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn prediction_loss_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let l = loss_prediction(&mut g, &[], &[]).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        let gt: Vec<Vec2> = (1..=10).map(|t| Vec2::new(t as f64, -(t as f64))).collect();
        let off: Vec<Vec2> = gt.iter().map(|p| Vec2::new(p.x + 1.0, p.y)).collect();
        let a = node(&mut g, &off);
        let b = node(&mut g, &off);
        let l = loss_prediction(&mut g, &[a, b], &[gt.clone(), gt.clone()]).unwrap();
        assert!((g.scalar(l) - 20.0).abs() < 1e-12);
        assert!(loss_prediction(&mut g, &[a], &[gt.clone(), gt]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        for (per, jpp, lambda, want) in [(0.5, 2.0, 1.0, 2.5), (0.5, 2.0, 0.0, 0.5), (1.0, 4.0, 0.5, 3.0)] {
            let p = g.input(Tensor::scalar(per));
            let j = g.input(Tensor::scalar(jpp));
            let l = loss_total(&mut g, p, j, lambda).unwrap();
            assert_eq!(g.scalar(l), want);
        }
    }

    #[test]
    fn planning_gradient_is_the_sign_of_the_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let gt = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        let plan = node(&mut g, &traj(&[(0.5, -1.0), (0.0, 3.0)]));
        let l = loss_planning(&mut g, plan, &gt).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(plan).unwrap(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn random_trajectories_match_scalar_resum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = ParamStore::new();
        for _ in 0..50 {
            let t = rng.gen_range(1..15);
            let mut pt = || -> Vec<Vec2> {
                (0..t)
                    .map(|_| Vec2::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)))
                    .collect()
            };
            let (p, q) = (pt(), pt());
            let mut g = Graph::new(&store);
            let pv = node(&mut g, &p);
            let l = loss_planning(&mut g, pv, &q).unwrap();
            let mut want = 0.0;
            for k in 0..t {
                want += (p[k].x - q[k].x).abs() + (p[k].y - q[k].y).abs();
            }
            assert!((g.scalar(l) - want).abs() <= 1e-12 * want.max(1.0));
        }
    }
}
