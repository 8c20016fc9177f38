mod common;

use common::{four_player_two_zone, random_market, rng};
use nalgebra::DMatrix;
use zonal_market::market::{clear_market, player_profit, MarketInstance, NetworkPolytope, Player, Strategy};
use zonal_market::nash::{
    audit, best_response, default_initial_profile, find_equilibrium, gauss_seidel_update, jacobi_update, GridConfig, Schedule, TIE_REL_TOL,
};
use zonal_market::rss::{slope_grid, RssContext};

fn config(n_pts: usize, schedule: Schedule) -> GridConfig {
    GridConfig { n_pts, max_cycles: 200, schedule, ..Default::default() }
}

#[test]
fn converged_runs_pass_the_deviation_audit() {
    let inst = four_player_two_zone();
    let ctx = RssContext::new(&inst).unwrap();
    let init = default_initial_profile(&ctx);
    let mut converged_any = false;
    for n_pts in [5, 11, 21] {
        for schedule in [Schedule::Jacobi, Schedule::GaussSeidel] {
            let rep = find_equilibrium(&inst, &ctx, &init, &config(n_pts, schedule)).unwrap();
            if rep.converged {
                converged_any = true;
                let fresh = audit(&inst, &ctx, &rep.strategies, n_pts).unwrap();
                assert!(fresh.passes(1e-9), "n_pts {n_pts} {schedule:?}: gain {}", fresh.max_gain());
                assert_eq!(fresh, rep.audit);
            }
        }
    }
    assert!(converged_any);
}

#[test]
fn best_response_beats_truthful_endpoint() {
    let mut r = rng(51);
    for _ in 0..50 {
        let inst = random_market(&mut r, 4, 2, 2);
        let ctx = RssContext::new(&inst).unwrap();
        let s = default_initial_profile(&ctx);
        for i in 0..4 {
            let br = best_response(&inst, &ctx, &s, i, 9).unwrap();
            let res = clear_market(&inst, &s).unwrap();
            let truthful = player_profit(&res, &inst, i);
            assert!(br.profit >= truthful - TIE_REL_TOL * truthful.abs().max(1.0));
        }
    }
}

/// A player whose zone is pinned to its own demand: the chosen grid point
/// must be the argmax over a ten times finer grid, and profit must be
/// monotone along the segment.
#[test]
fn isolated_monopolist_matches_fine_grid() {
    let players = vec![Player::new(0, 2.0, 1.0, 10.0), Player::new(1, 1.0, 0.5, 10.0), Player::new(1, 3.0, 0.2, 10.0)];
    let demand = vec![1.5, 2.0];
    let m_p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
    let network = NetworkPolytope { m_p, b_p: vec![1.5, -1.5], zone_box: None };
    let inst = MarketInstance::new(players, demand, network).unwrap();
    let ctx = RssContext::new(&inst).unwrap();
    let s = default_initial_profile(&ctx);
    let coarse = best_response(&inst, &ctx, &s, 0, 6).unwrap();
    let fine: Vec<f64> = slope_grid(2.0, 51)
        .into_iter()
        .map(|m| {
            let mut t = s.clone();
            t[0] = ctx.strategy_for_slope(0, m).unwrap();
            player_profit(&clear_market(&inst, &t).unwrap(), &inst, 0)
        })
        .collect();
    let argmax = fine.iter().enumerate().fold(0, |b, (k, p)| if *p > fine[b] { k } else { b });
    assert_eq!(slope_grid(2.0, 51)[argmax], coarse.strategy.m);
    let increasing = fine.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let decreasing = fine.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    assert!(increasing || decreasing);
}

#[test]
fn jacobi_fixed_point_is_preserved_by_both_schedules() {
    let inst = four_player_two_zone();
    let ctx = RssContext::new(&inst).unwrap();
    let rep = find_equilibrium(&inst, &ctx, &default_initial_profile(&ctx), &config(11, Schedule::Jacobi)).unwrap();
    assert!(rep.converged);
    let fp = rep.strategies;
    assert_eq!(jacobi_update(&inst, &ctx, &fp, 11).unwrap(), fp);
    assert_eq!(gauss_seidel_update(&inst, &ctx, &fp, 11, &[0, 1, 2, 3]).unwrap(), fp);
    assert_eq!(gauss_seidel_update(&inst, &ctx, &fp, 11, &[3, 1, 0, 2]).unwrap(), fp);
}

#[test]
fn jacobi_is_equivariant_under_player_permutation() {
    let inst = four_player_two_zone();
    let ctx = RssContext::new(&inst).unwrap();
    let s = default_initial_profile(&ctx);
    let base = jacobi_update(&inst, &ctx, &s, 11).unwrap();
    let perm = [2usize, 0, 3, 1];
    let permuted =
        MarketInstance::new(perm.iter().map(|&i| inst.players[i]).collect(), inst.zonal_demand.clone(), inst.network.clone()).unwrap();
    let pctx = RssContext::new(&permuted).unwrap();
    let ps: Vec<Strategy> = perm.iter().map(|&i| s[i]).collect();
    let out = jacobi_update(&permuted, &pctx, &ps, 11).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(out[k].m, base[i].m);
        assert!((out[k].a - base[i].a).abs() <= 1e-12 * base[i].a.abs().max(1.0));
    }
}

#[test]
fn jacobi_decomposes_into_independent_best_responses() {
    let players = vec![Player::new(0, 2.0, 1.0, 5.0), Player::new(0, 3.0, 0.5, 5.0)];
    let inst = MarketInstance::single_zone(players, 2.0).unwrap();
    let ctx = RssContext::new(&inst).unwrap();
    let s = default_initial_profile(&ctx);
    let j = jacobi_update(&inst, &ctx, &s, 9).unwrap();
    for i in 0..2 {
        assert_eq!(j[i], best_response(&inst, &ctx, &s, i, 9).unwrap().strategy);
    }
}

#[test]
fn gauss_seidel_sees_earlier_moves() {
    let inst = four_player_two_zone();
    let ctx = RssContext::new(&inst).unwrap();
    let s = default_initial_profile(&ctx);
    let order = [2, 0, 3, 1];
    let g = gauss_seidel_update(&inst, &ctx, &s, 11, &order).unwrap();
    let mut expected = s.clone();
    for &i in &order {
        expected[i] = best_response(&inst, &ctx, &expected, i, 11).unwrap().strategy;
    }
    assert_eq!(g, expected);
    let j = jacobi_update(&inst, &ctx, &s, 11).unwrap();
    assert_eq!(j[order[0]], g[order[0]]);
    assert_ne!(j, s);
}

#[test]
fn single_player_schedules_agree() {
    let inst = MarketInstance::single_zone(vec![Player::new(0, 2.0, 1.0, 10.0)], 1.0).unwrap();
    let ctx = RssContext::new(&inst).unwrap();
    let s = default_initial_profile(&ctx);
    let br = best_response(&inst, &ctx, &s, 0, 7).unwrap().strategy;
    assert_eq!(jacobi_update(&inst, &ctx, &s, 7).unwrap(), vec![br]);
    assert_eq!(gauss_seidel_update(&inst, &ctx, &s, 7, &[0]).unwrap(), vec![br]);
}

#[test]
fn symmetric_duopoly_stays_symmetric() {
    let players = vec![Player::new(0, 2.0, 1.0, 5.0); 2];
    let inst = MarketInstance::single_zone(players, 2.0).unwrap();
    let ctx = RssContext::new(&inst).unwrap();
    let rep = find_equilibrium(&inst, &ctx, &default_initial_profile(&ctx), &config(9, Schedule::Jacobi)).unwrap();
    for profile in &rep.trace {
        assert_eq!(profile[0], profile[1]);
    }
}

#[test]
fn fixed_point_survives_embedding_in_finer_grid() {
    let inst = four_player_two_zone();
    let ctx = RssContext::new(&inst).unwrap();
    let rep = find_equilibrium(&inst, &ctx, &default_initial_profile(&ctx), &config(6, Schedule::GaussSeidel)).unwrap();
    assert!(rep.converged);
    let base = clear_market(&inst, &rep.strategies).unwrap();
    for i in 0..inst.n_players() {
        let fine = ctx.candidates(i, 11).unwrap();
        let coarse = ctx.candidates(i, 6).unwrap();
        let embedded: Vec<Strategy> = fine.iter().step_by(2).copied().collect();
        assert_eq!(embedded, coarse);
        let current = player_profit(&base, &inst, i);
        for cand in embedded {
            let mut t = rep.strategies.clone();
            t[i] = cand;
            assert!(player_profit(&clear_market(&inst, &t).unwrap(), &inst, i) <= current + 1e-9);
        }
    }
}

#[test]
fn presolve_and_reruns_are_deterministic() {
    let inst = four_player_two_zone();
    let ctx = RssContext::new(&inst).unwrap();
    let init = default_initial_profile(&ctx);
    let cfg = GridConfig { presolve: Some(Box::new(config(5, Schedule::Jacobi))), ..config(21, Schedule::Jacobi) };
    let a = find_equilibrium(&inst, &ctx, &init, &cfg).unwrap();
    let b = find_equilibrium(&inst, &ctx, &init, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.presolve_cycles > 0);
}
