//! Test-only oracles, independent of the solver paths they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zonal_market::qp::Cqp;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Constraint in `nᵀx ≥ b` form.
struct GeConstraint {
    normal: DVector<f64>,
    rhs: f64,
    var: Option<usize>,
}

/// Brute-force KKT search: enumerate every candidate active set (equality
/// always active), solve the equality-constrained subproblem, and return the
/// unique point that is primal feasible with nonnegative inequality
/// multipliers.
pub fn enumerate_active_sets(qp: &Cqp) -> Option<Vec<f64>> {
    let n = qp.dim();
    let g = qp.diag_hessian();
    let a = DVector::from_column_slice(qp.linear_cost());
    let mut ineqs = Vec::new();
    for k in 0..qp.n_rows() {
        ineqs.push(GeConstraint { normal: -qp.ineq_matrix().row(k).transpose(), rhs: -qp.ineq_rhs()[k], var: None });
    }
    for i in 0..n {
        if qp.lower_bounds()[i].is_finite() {
            ineqs.push(GeConstraint { normal: unit(n, i, 1.0), rhs: qp.lower_bounds()[i], var: Some(i) });
        }
        if qp.upper_bounds()[i].is_finite() {
            ineqs.push(GeConstraint { normal: unit(n, i, -1.0), rhs: -qp.upper_bounds()[i], var: Some(i) });
        }
    }
    let eq = qp.equality().map(|(v, d)| (DVector::from_column_slice(v), d));
    let max_active = if eq.is_some() { n - 1 } else { n };
    let m = ineqs.len();
    let mut best: Option<(f64, Vec<f64>)> = None;

    let mut subset: Vec<usize> = Vec::new();
    fn recurse(start: usize, m: usize, max_active: usize, subset: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        visit(subset);
        if subset.len() == max_active {
            return;
        }
        for k in start..m {
            subset.push(k);
            recurse(k + 1, m, max_active, subset, visit);
            subset.pop();
        }
    }

    let mut visit = |set: &[usize]| {
        // Both bounds of one variable cannot be simultaneously active unless
        // they coincide; skip to save work.
        for (p, &i) in set.iter().enumerate() {
            for &j in &set[p + 1..] {
                if ineqs[i].var.is_some() && ineqs[i].var == ineqs[j].var {
                    return;
                }
            }
        }
        let k_eq = usize::from(eq.is_some());
        let q = set.len() + k_eq;
        let mut normals = DMatrix::zeros(n, q);
        let mut rhs = DVector::zeros(q);
        if let Some((v, d)) = &eq {
            normals.set_column(0, v);
            rhs[0] = *d;
        }
        for (col, &idx) in set.iter().enumerate() {
            normals.set_column(col + k_eq, &ineqs[idx].normal);
            rhs[col + k_eq] = ineqs[idx].rhs;
        }
        let x = if q == 0 {
            DVector::from_fn(n, |i, _| -a[i] / g[i])
        } else {
            let ginv_n = DMatrix::from_fn(n, q, |i, c| normals[(i, c)] / g[i]);
            let schur = normals.tr_mul(&ginv_n);
            let Some(lu) = schur.clone().full_piv_lu().try_inverse() else { return };
            let u = lu * (rhs + ginv_n.tr_mul(&a));
            for (col, _) in set.iter().enumerate() {
                if u[col + k_eq] < -1e-10 {
                    return;
                }
            }
            let nu = &normals * &u;
            DVector::from_fn(n, |i, _| (nu[i] - a[i]) / g[i])
        };
        if let Some((v, d)) = &eq {
            if (v.dot(&x) - d).abs() > 1e-8 * d.abs().max(1.0) {
                return;
            }
        }
        for c in &ineqs {
            if c.normal.dot(&x) - c.rhs < -1e-9 * c.rhs.abs().max(1.0) {
                return;
            }
        }
        let xs: Vec<f64> = x.iter().copied().collect();
        let f = qp.objective(&xs);
        if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
            best = Some((f, xs));
        }
    };
    recurse(0, m, max_active, &mut subset, &mut visit);
    best.map(|(_, x)| x)
}

fn unit(n: usize, i: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |r, _| if r == i { s } else { 0.0 })
}

/// Random feasible CQP: `n` variables with finite boxes, `rows` general
/// inequalities and one equality, all satisfied by an interior anchor point.
pub fn random_cqp(rng: &mut impl Rng, n: usize, rows: usize) -> Cqp {
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.5..4.0)).collect();
    let anchor: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
    let m = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
    let h: Vec<f64> = (0..rows)
        .map(|k| {
            let mx: f64 = (0..n).map(|i| m[(k, i)] * anchor[i]).sum();
            mx + rng.random_range(0.0..0.5)
        })
        .collect();
    let e: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let d: f64 = e.iter().zip(&anchor).map(|(a, b)| a * b).sum();
    Cqp::new(g, a).unwrap().with_bounds(lo, hi).unwrap().with_inequalities(m, h).unwrap().with_equality(e, d).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random feasible multi-zone market: an anchor allocation inside the
/// capacity boxes fixes the demand, and every network row is satisfied by it
/// with a random slack.
pub fn random_market(rng: &mut impl Rng, n_players: usize, n_zones: usize, n_rows: usize) -> zonal_market::market::MarketInstance {
    use zonal_market::market::{MarketInstance, NetworkPolytope, Player};
    let players: Vec<Player> = (0..n_players)
        .map(|i| {
            let zone = if i < n_zones { i } else { rng.random_range(0..n_zones) };
            Player::new(zone, rng.random_range(0.5..5.0), rng.random_range(0.0..3.0), rng.random_range(0.5..3.0))
        })
        .collect();
    let anchor: Vec<f64> = players.iter().map(|p| p.q * rng.random_range(0.1..0.9)).collect();
    let mut zonal_demand = vec![0.0; n_zones];
    for (p, x) in players.iter().zip(&anchor) {
        zonal_demand[p.zone] += x;
    }
    // Shift demand across zones so that the anchor implies trade.
    if n_zones > 1 {
        let t = 0.3 * zonal_demand[0];
        zonal_demand[0] -= t;
        zonal_demand[1] += t;
    }
    let mut y = vec![0.0; n_zones];
    for (p, x) in players.iter().zip(&anchor) {
        y[p.zone] += x;
    }
    let d: f64 = zonal_demand.iter().sum();
    let m_p = DMatrix::from_fn(n_rows, n_zones, |_, _| rng.random_range(-1.0..1.0));
    let b_p = (0..n_rows).map(|k| (0..n_zones).map(|z| m_p[(k, z)] * y[z]).sum::<f64>() + rng.random_range(0.0..0.3 * d)).collect();
    MarketInstance::new(players, zonal_demand, NetworkPolytope { m_p, b_p, zone_box: None }).unwrap()
}

/// Strategies drawn from the safety set `m ≥ ½c`, `a ≥ b`.
pub fn random_safe_strategies(
    rng: &mut impl Rng,
    instance: &zonal_market::market::MarketInstance,
) -> zonal_market::market::StrategyProfile {
    use zonal_market::market::Strategy;
    instance.players.iter().map(|p| Strategy::new(p.c * rng.random_range(0.5..3.0), p.b + rng.random_range(0.0..3.0))).collect()
}

/// Four players in two zones linked by one line with a tight margin.
pub fn four_player_two_zone() -> zonal_market::market::MarketInstance {
    use zonal_market::market::{assemble_polytope, MarketInstance, Player};
    let players =
        vec![Player::new(0, 2.0, 1.0, 1.2), Player::new(0, 3.0, 0.5, 1.2), Player::new(1, 1.5, 2.0, 1.5), Player::new(1, 4.0, 1.0, 1.5)];
    let demand = vec![2.0, 2.5];
    let ptdf = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
    let network = assemble_polytope(&ptdf, &[-0.3], &[0.3], &demand, 0.6).unwrap();
    MarketInstance::new(players, demand, network).unwrap()
}
