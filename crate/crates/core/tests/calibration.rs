mod common;

use approx::assert_relative_eq;
use common::{random_market, rng};
use nalgebra::DMatrix;
use rand::Rng;
use zonal_market::calibration::{
    clear_scaled, evaluate, fit_tb_scales, gradient, gt_ratio_adjust, hessian_diag_blocks, objective, CalibrationProblem, Scales,
    StopReason,
};
use zonal_market::market::{MarketInstance, NetworkPolytope, Player};

/// Two zones whose productions are pinned to their demands, one player each.
fn pinned_two_zone(d: [f64; 2]) -> MarketInstance {
    let players = vec![Player::new(0, 1.5, 2.0, 100.0), Player::new(1, 0.7, 4.0, 100.0)];
    let m_p = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
    let network = NetworkPolytope { m_p, b_p: vec![d[0], -d[0], d[1], -d[1]], zone_box: None };
    MarketInstance::new(players, d.to_vec(), network).unwrap()
}

fn self_targets(hours: &[MarketInstance], s: &Scales) -> Vec<Vec<Option<f64>>> {
    hours.iter().map(|h| clear_scaled(h, s).unwrap().unwrap().v).collect()
}

fn random_scales(r: &mut impl Rng, nz: usize) -> Scales {
    Scales { c: (0..nz).map(|_| r.random_range(0.5..2.0)).collect(), b: (0..nz).map(|_| r.random_range(0.5..2.0)).collect() }
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(61);
    let mut checked = 0;
    while checked < 20 {
        let hours: Vec<MarketInstance> = (0..3).map(|_| random_market(&mut r, 5, 2, 2)).collect();
        let targets = hours.iter().map(|h| (0..h.n_zones()).map(|_| Some(r.random_range(1.0..8.0))).collect()).collect();
        let p = CalibrationProblem::new(hours, targets).unwrap();
        let s = random_scales(&mut r, 2);
        let base = evaluate(&p, &s).unwrap();
        let g = base.grad.clone();
        let h = 1e-6;
        let mut smooth = true;
        let mut fd = vec![0.0; 4];
        for j in 0..4 {
            let mut plus = s.to_vec();
            let mut minus = s.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let ep = evaluate(&p, &Scales::from_vec(&plus)).unwrap();
            let em = evaluate(&p, &Scales::from_vec(&minus)).unwrap();
            let same = |e: &zonal_market::calibration::Evaluation| {
                e.hours.iter().zip(&base.hours).all(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => a.price_setters == b.price_setters && a.active_set.len() == b.active_set.len(),
                    (None, None) => true,
                    _ => false,
                })
            };
            smooth &= same(&ep) && same(&em);
            fd[j] = (ep.f - em.f) / (2.0 * h);
        }
        if !smooth {
            continue;
        }
        for j in 0..4 {
            assert!((g[j] - fd[j]).abs() <= 1e-4 * fd[j].abs().max(1.0), "component {j}: analytic {} vs fd {}", g[j], fd[j]);
        }
        checked += 1;
    }
}

#[test]
fn blocks_match_differences_of_the_gradient() {
    let hours: Vec<MarketInstance> = [[1.0, 2.0], [2.5, 0.5], [1.5, 1.5]].iter().map(|&d| pinned_two_zone(d)).collect();
    let targets = vec![vec![Some(5.0), Some(3.0)], vec![Some(7.0), Some(2.0)], vec![Some(4.0), Some(6.0)]];
    let p = CalibrationProblem::new(hours, targets).unwrap();
    let s = Scales { c: vec![1.2, 0.8], b: vec![0.9, 1.1] };
    let blocks = hessian_diag_blocks(&p, &s).unwrap();
    let h = 1e-5;
    for z in 0..2 {
        for (a, ja) in [(0, 2 * z), (1, 2 * z + 1)] {
            let mut plus = s.to_vec();
            let mut minus = s.to_vec();
            plus[ja] += h;
            minus[ja] -= h;
            let gp = gradient(&p, &Scales::from_vec(&plus)).unwrap();
            let gm = gradient(&p, &Scales::from_vec(&minus)).unwrap();
            for (b, jb) in [(0, 2 * z), (1, 2 * z + 1)] {
                let fd = (gp[jb] - gm[jb]) / (2.0 * h);
                assert_relative_eq!(blocks[z][a][b], fd, max_relative = 1e-6, epsilon = 1e-8);
            }
            let other = 2 * (1 - z);
            assert_relative_eq!((gp[other] - gm[other]) / (2.0 * h), 0.0, epsilon = 1e-8);
        }
    }
}

#[test]
fn single_hour_block_is_an_outer_product() {
    let hour = pinned_two_zone([2.0, 1.0]);
    let p = CalibrationProblem::new(vec![hour.clone()], vec![vec![Some(9.0), Some(1.0)]]).unwrap();
    let blocks = hessian_diag_blocks(&p, &Scales::ones(2)).unwrap();
    for (z, pl) in hour.players.iter().enumerate() {
        let u = [pl.c * hour.zonal_demand[z], pl.b];
        for a in 0..2 {
            for b in 0..2 {
                assert_relative_eq!(blocks[z][a][b], 2.0 * u[a] * u[b], max_relative = 1e-12);
            }
        }
    }
}

#[test]
fn random_blocks_are_positive_semidefinite() {
    let mut r = rng(62);
    for _ in 0..50 {
        let hours: Vec<MarketInstance> = (0..3).map(|_| random_market(&mut r, 5, 2, 2)).collect();
        let targets = hours.iter().map(|_| vec![Some(r.random_range(1.0..8.0)); 2]).collect();
        let p = CalibrationProblem::new(hours, targets).unwrap();
        for b in hessian_diag_blocks(&p, &random_scales(&mut r, 2)).unwrap() {
            let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
            assert!(b[0][0] >= 0.0 && b[1][1] >= 0.0);
            assert!(det >= -1e-9 * (b[0][0] * b[1][1]).max(1.0));
        }
    }
}

#[test]
fn self_target_fit_stops_at_start() {
    let mut r = rng(63);
    let hours: Vec<MarketInstance> = (0..4).map(|_| random_market(&mut r, 5, 2, 2)).collect();
    let targets = self_targets(&hours, &Scales::ones(2));
    let p = CalibrationProblem::new(hours, targets).unwrap();
    let fit = fit_tb_scales(&p).unwrap();
    assert_eq!(fit.f, 0.0);
    assert_eq!(fit.scales, Scales::ones(2));
    assert_eq!(fit.stop, StopReason::GradientTolerance);
}

#[test]
fn doubled_targets_give_mean_square_price() {
    let mut r = rng(64);
    let hours: Vec<MarketInstance> = (0..4).map(|_| random_market(&mut r, 5, 2, 2)).collect();
    let own = self_targets(&hours, &Scales::ones(2));
    let doubled: Vec<Vec<Option<f64>>> = own.iter().map(|t| t.iter().map(|v| v.map(|v| 2.0 * v)).collect()).collect();
    let expected: f64 = own.iter().flatten().flatten().map(|v| v * v).sum::<f64>() / 4.0;
    let p = CalibrationProblem::new(hours.clone(), doubled.clone()).unwrap();
    assert_relative_eq!(objective(&p, &Scales::ones(2)).unwrap(), expected, max_relative = 1e-12);

    let perm = [2, 0, 3, 1];
    let q = CalibrationProblem::new(perm.iter().map(|&t| hours[t].clone()).collect(), perm.iter().map(|&t| doubled[t].clone()).collect())
        .unwrap();
    let s = random_scales(&mut r, 2);
    assert_relative_eq!(objective(&p, &s).unwrap(), objective(&q, &s).unwrap(), max_relative = 1e-12);
}

#[test]
fn zone_without_residual_has_zero_gradient() {
    let hours: Vec<MarketInstance> = [[1.0, 2.0], [2.0, 1.0]].iter().map(|&d| pinned_two_zone(d)).collect();
    let mut targets = self_targets(&hours, &Scales::ones(2));
    for t in &mut targets {
        t[1] = t[1].map(|v| v + 3.0);
    }
    let p = CalibrationProblem::new(hours, targets).unwrap();
    let g = gradient(&p, &Scales::ones(2)).unwrap();
    assert!(g[..2].iter().all(|v| v.abs() <= 1e-12), "{g:?}");
    assert!(g[2] != 0.0 && g[3] != 0.0);
}

/// One player, one zone, all of the demand: `v = s^c c d_t + s^b b` is linear
/// in the scales and the optimum solves the 2×2 normal equations.
#[test]
fn single_player_fit_matches_normal_equations() {
    let (c, b) = (1.0, 1.0);
    let demand = [0.5, 0.8, 1.0, 1.2, 1.5, 0.7];
    let targets = [2.0, 2.9, 3.1, 3.8, 4.6, 2.4];
    let hours: Vec<MarketInstance> =
        demand.iter().map(|&d| MarketInstance::single_zone(vec![Player::new(0, c, b, 100.0)], d).unwrap()).collect();
    let mut p = CalibrationProblem::new(hours, targets.iter().map(|&t| vec![Some(t)]).collect()).unwrap();
    p.settings.max_iter = 20_000;
    p.settings.grad_tol = 1e-10;

    let n = demand.len() as f64;
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&d, &t) in demand.iter().zip(&targets) {
        let (u, w) = (c * d, b);
        s11 += u * u;
        s12 += u * w;
        s22 += w * w;
        r1 += u * t;
        r2 += w * t;
    }
    let det = s11 * s22 - s12 * s12;
    let (sc, sb) = ((s22 * r1 - s12 * r2) / det, (s11 * r2 - s12 * r1) / det);
    assert!(sc > 0.0 && sb > 0.0);
    let f_opt: f64 = demand.iter().zip(&targets).map(|(&d, &t)| (sc * c * d + sb * b - t).powi(2)).sum::<f64>() / n;

    let fit = fit_tb_scales(&p).unwrap();
    assert!((fit.f - f_opt).abs() <= 1e-6, "{} vs {f_opt}", fit.f);
    assert!(fit.trace.windows(2).all(|w| w[1].f <= w[0].f));
}

#[test]
fn fit_decreases_objective_monotonically() {
    let mut r = rng(65);
    let hours: Vec<MarketInstance> = (0..4).map(|_| random_market(&mut r, 5, 2, 2)).collect();
    let truth = Scales { c: vec![1.4, 0.7], b: vec![0.8, 1.3] };
    let targets = self_targets(&hours, &truth);
    let mut p = CalibrationProblem::new(hours, targets).unwrap();
    p.settings.max_iter = 200;
    let fit = fit_tb_scales(&p).unwrap();
    assert!(fit.trace.windows(2).all(|w| w[1].f < w[0].f));
    assert!(fit.f < fit.trace[0].f);
    assert!(fit.scales.c.iter().chain(&fit.scales.b).all(|&v| v >= p.settings.s_min));
}

#[test]
fn ratio_adjust_averages_per_hour_ratios() {
    let targets = vec![vec![Some(10.0), Some(4.0)], vec![Some(20.0), Some(5.0)], vec![Some(8.0), None]];
    let gt = vec![vec![Some(12.0), Some(2.0)], vec![Some(15.0), Some(10.0)], vec![Some(8.0), Some(3.0)]];
    let s = Scales { c: vec![2.0, 3.0], b: vec![0.5, 0.25] };
    let out = gt_ratio_adjust(&gt, &targets, &s, &[0, 1, 2]).unwrap();
    let r0 = (12.0 / 10.0 + 15.0 / 20.0 + 8.0 / 8.0) / 3.0;
    let r1 = (2.0 / 4.0 + 10.0 / 5.0) / 2.0;
    assert_relative_eq!(out.c[0], 2.0 / r0, max_relative = 1e-15);
    assert_relative_eq!(out.c[1], 3.0 / r1, max_relative = 1e-15);
    assert_eq!(out.b, s.b);
    assert_eq!(gt_ratio_adjust(&targets, &targets, &out, &[0, 1]).unwrap(), out);
}
