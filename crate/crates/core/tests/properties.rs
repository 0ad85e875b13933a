mod common;

use std::collections::BTreeSet;

use climstar::cluster::{agglomerate, cut, ClusterAssignment, CutRule};
use climstar::distance::{diff_distance, DistanceMatrix, Metric};
use climstar::eval::{frobenius_norm, loss_series, LossGranularity, LossSeries};
use climstar::mcs::{mcs, McsConfig, McsStatistic};
use climstar::panel::{load_panel, split_panel, AdjacencyList, PanelFormat, TemperaturePanel};
use climstar::star::fit_star;
use climstar::weights::{cluster_restricted_weights, contiguity_weights, distance_weights, ScaleMode, WeightKind};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn panel_from(values: &DMatrix<f64>) -> TemperaturePanel {
    let names = ids(values.nrows());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = values.row_iter().map(|r| r.iter().copied().collect()).collect();
    TemperaturePanel::from_rows(&refs, 1950, &rows).unwrap()
}

/// Symmetric distance matrix with entries strictly below `n`.
fn distance_below(seed: u64, k: usize, n: f64) -> DistanceMatrix {
    let mut r = rng(seed);
    let mut d = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let v = n * r.random::<f64>() * 0.999;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DistanceMatrix::new(Metric::Diff, ids(k), d).unwrap()
}

fn random_groups(seed: u64, k: usize) -> ClusterAssignment {
    let mut r = rng(seed ^ 0xabc);
    let n_groups = r.random_range(1..=k.min(5));
    let mut groups = vec![Vec::new(); n_groups];
    for id in ids(k) {
        groups[r.random_range(0..n_groups)].push(id);
    }
    ClusterAssignment::from_groups(&groups, 2).unwrap()
}

fn check_row_stochastic_or_zero(w: &climstar::WeightMatrix) {
    for i in 0..w.len() {
        let s: f64 = w.values().row(i).sum();
        assert!(s == 0.0 || (s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
        assert_eq!(w.get(i, i), 0.0);
        assert!(w.values().row(i).iter().all(|&v| v >= 0.0));
    }
    assert_eq!(w.meta().zero_rows, w.zero_rows().len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_row_stochastic_or_zero(seed in any::<u64>(), k in 2usize..25) {
        let panel = random_panel(&mut rng(seed), k, 6);
        let dist = distance_below(seed, k, k as f64);
        let assign = random_groups(seed, k);
        let dw = distance_weights(&dist, &panel, WeightKind::DistanceB, ScaleMode::Raw).unwrap();
        check_row_stochastic_or_zero(&dw);
        let cw = cluster_restricted_weights(&dist, &assign, &panel, WeightKind::ClusterB, ScaleMode::Raw).unwrap();
        check_row_stochastic_or_zero(&cw);
        // every clustered country has a positive in-cluster neighbour
        let uncovered = k - assign.labels().len();
        prop_assert_eq!(cw.meta().zero_rows, uncovered);
    }

    #[test]
    fn contiguity_zero_rows_are_islands(seed in any::<u64>(), k in 2usize..20) {
        let mut r = rng(seed);
        let names = ids(k);
        let mut edges = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                if r.random::<f64>() < 0.15 {
                    edges.push((names[i].as_str(), names[j].as_str()));
                }
            }
        }
        let panel = random_panel(&mut r, k, 5);
        let adj = AdjacencyList::from_edges(&names, edges.iter().copied()).unwrap();
        let w = contiguity_weights(&adj, &panel).unwrap();
        check_row_stochastic_or_zero(&w);
        let islands = names.iter().filter(|id| adj.degree(id) == 0).count();
        prop_assert_eq!(w.meta().zero_rows, islands);
        for i in 0..k {
            let m = adj.degree(&names[i]);
            for j in 0..k {
                let expect = if adj.neighbors(&names[i]).unwrap().contains(&names[j]) { 1.0 / m as f64 } else { 0.0 };
                prop_assert_eq!(w.get(i, j), expect);
            }
        }
    }

    #[test]
    fn adjacency_symmetric_for_any_edge_order(seed in any::<u64>(), k in 2usize..12) {
        let mut r = rng(seed);
        let names = ids(k);
        let mut edges = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if i != j && r.random::<f64>() < 0.2 {
                    edges.push((names[i].as_str(), names[j].as_str()));
                }
            }
        }
        let forward = AdjacencyList::from_edges(&names, edges.iter().copied()).unwrap();
        let reversed = AdjacencyList::from_edges(&names, edges.iter().rev().map(|&(a, b)| (b, a))).unwrap();
        prop_assert_eq!(&forward, &reversed);
        for a in &names {
            for b in forward.neighbors(a).unwrap() {
                prop_assert!(forward.neighbors(b).unwrap().contains(a));
            }
        }
    }

    #[test]
    fn distance_weights_monotone_in_distance(seed in any::<u64>(), k in 3usize..20) {
        let panel = random_panel(&mut rng(seed), k, 5);
        let dist = distance_below(seed, k, k as f64);
        let w = distance_weights(&dist, &panel, WeightKind::DistanceA, ScaleMode::Raw).unwrap();
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    if i != j && i != l && dist.get(i, j) < dist.get(i, l) {
                        prop_assert!(w.get(i, j) >= w.get(i, l));
                    }
                }
            }
        }
    }

    #[test]
    fn cluster_weights_equal_mask_then_normalize(seed in any::<u64>(), k in 2usize..20) {
        let panel = random_panel(&mut rng(seed), k, 5);
        let dist = distance_below(seed, k, k as f64);
        let assign = random_groups(seed, k);
        let w = cluster_restricted_weights(&dist, &assign, &panel, WeightKind::ClusterC, ScaleMode::Raw).unwrap();
        let names = ids(k);
        let nf = k as f64;
        for i in 0..k {
            let mut row: Vec<f64> = (0..k)
                .map(|j| {
                    let same = matches!(
                        (assign.cluster_of(&names[i]), assign.cluster_of(&names[j])),
                        (Some(a), Some(b)) if a == b
                    );
                    if i != j && same { (nf - dist.get(i, j)) / nf } else { 0.0 }
                })
                .collect();
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
            for j in 0..k {
                prop_assert!((w.get(i, j) - row[j]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn frobenius_decomposes_by_period(seed in any::<u64>(), n in 1usize..15, h in 1usize..30) {
        let mut r = rng(seed);
        let obs = DMatrix::from_fn(n, h, |_, _| 20.0 * normal(&mut r));
        let pred = DMatrix::from_fn(n, h, |_, _| 20.0 * normal(&mut r));
        let total = frobenius_norm(&obs, &pred).unwrap();
        let per_period = loss_series("m", &obs, &pred, LossGranularity::PerPeriod).unwrap();
        prop_assert_eq!(per_period.losses.len(), h);
        prop_assert!((per_period.total() - total).abs() <= 1e-9 * total.max(1.0));
        let per_obs = loss_series("m", &obs, &pred, LossGranularity::PerObservation).unwrap();
        prop_assert_eq!(per_obs.losses.len(), n * h);
        prop_assert!((per_obs.total() - total).abs() <= 1e-9 * total.max(1.0));
        // trace form
        let e = &obs - &pred;
        let trace = (e.transpose() * &e).trace();
        prop_assert!((trace - total).abs() <= 1e-9 * total.max(1.0));
        prop_assert_eq!(frobenius_norm(&obs, &obs).unwrap(), 0.0);
        // reordering countries does not change the loss
        let order: Vec<usize> = (0..n).rev().collect();
        let obs_p = obs.select_rows(order.iter());
        let pred_p = pred.select_rows(order.iter());
        prop_assert!((frobenius_norm(&obs_p, &pred_p).unwrap() - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn diff_distance_ignores_level_shifts(seed in any::<u64>(), k in 2usize..8) {
        let mut r = rng(seed);
        let panel = random_panel(&mut r, k, 30);
        let shifts: Vec<f64> = (0..k).map(|_| 50.0 * normal(&mut r)).collect();
        let shifted = panel_from(&DMatrix::from_fn(k, 30, |i, t| panel.value(i, t) + shifts[i]));
        let a = diff_distance(&panel).unwrap();
        let b = diff_distance(&shifted).unwrap();
        for i in 0..k {
            for j in 0..k {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn cut_refines_as_k_grows(seed in any::<u64>(), k in 3usize..16) {
        let dist = distance_below(seed, k, 10.0);
        let den = agglomerate(&dist).unwrap();
        let mut prev: Option<BTreeSet<BTreeSet<String>>> = None;
        for g in 1..=k {
            let a = cut(&den, CutRule::Groups(g), 1).unwrap();
            let now = a.clusters();
            prop_assert_eq!(now.len(), g);
            if let Some(coarse) = &prev {
                for fine in &now {
                    prop_assert!(coarse.iter().any(|c| fine.is_subset(c)));
                }
            }
            prev = Some(now);
        }
    }

    #[test]
    fn merge_heights_match_raw_average(seed in any::<u64>(), k in 2usize..16) {
        let dist = distance_below(seed, k, 10.0);
        let den = agglomerate(&dist).unwrap();
        let mut members: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
        for m in den.merges() {
            let (a, b) = (members[m.left].clone(), members[m.right].clone());
            let mut sum = 0.0;
            for &i in &a {
                for &j in &b {
                    sum += dist.get(i, j);
                }
            }
            let avg = sum / (a.len() * b.len()) as f64;
            prop_assert!((avg - m.height).abs() <= 1e-10);
            prop_assert_eq!(m.size, a.len() + b.len());
            members.push([a, b].concat());
        }
    }

    #[test]
    fn clustering_invariant_to_country_order(seed in any::<u64>(), k in 3usize..14, g in 1usize..5) {
        let dist = distance_below(seed, k, 10.0);
        let mut order: Vec<usize> = (0..k).collect();
        let mut r = rng(seed.wrapping_add(1));
        for i in (1..k).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let labels: Vec<String> = order.iter().map(|&i| dist.labels()[i].clone()).collect();
        let values = DMatrix::from_fn(k, k, |i, j| dist.get(order[i], order[j]));
        let permuted = DistanceMatrix::new(Metric::Diff, labels, values).unwrap();
        let g = g.min(k);
        let a = cut(&agglomerate(&dist).unwrap(), CutRule::Groups(g), 1).unwrap();
        let b = cut(&agglomerate(&permuted).unwrap(), CutRule::Groups(g), 1).unwrap();
        prop_assert_eq!(a.clusters(), b.clusters());
    }

    #[test]
    fn panel_csv_round_trip_is_exact(seed in any::<u64>(), n in 1usize..6, t in 1usize..12) {
        let mut r = rng(seed);
        let values = DMatrix::from_fn(n, t, |_, _| normal(&mut r) * 10f64.powi(r.random_range(-8..4)));
        let panel = panel_from(&values);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        panel.write_csv(&path).unwrap();
        let back = load_panel(&path, PanelFormat::Auto).unwrap();
        prop_assert_eq!(back.ids(), panel.ids());
        prop_assert_eq!(back.years(), panel.years());
        for (a, b) in back.values().iter().zip(panel.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn split_preserves_every_cell(seed in any::<u64>(), n in 1usize..6, t in 2usize..20, at in 0usize..19) {
        let panel = random_panel(&mut rng(seed), n, t);
        let at = at % (t - 1);
        let year = panel.first_year() + at as i32;
        let (train, test) = split_panel(&panel, year).unwrap();
        prop_assert_eq!(train.n_years() + test.n_years(), t);
        prop_assert_eq!(train.last_year(), year);
        for i in 0..n {
            let joined: Vec<f64> = train.series(i).iter().chain(test.series(i)).copied().collect();
            prop_assert_eq!(joined.as_slice(), panel.series(i));
        }
    }
}

#[test]
fn star_invariant_to_country_order() {
    let mut r = rng(5);
    for _ in 0..20 {
        let n = r.random_range(3..9);
        let panel = random_panel(&mut r, n, 25);
        let w = random_weights(&mut r, n);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let permuted = panel.permuted(&order).unwrap();
        let wp = DMatrix::from_fn(n, n, |i, j| w[(order[i], order[j])]);
        let a = fit_star(&panel, &weight_matrix(WeightKind::DistanceA, &panel, w)).unwrap();
        let b = fit_star(&permuted, &weight_matrix(WeightKind::DistanceA, &permuted, wp)).unwrap();
        for (pos, &orig) in order.iter().enumerate() {
            let (ea, eb) = (&a.equations[orig], &b.equations[pos]);
            assert_eq!(ea.country, eb.country);
            assert!((ea.c - eb.c).abs() <= 1e-10);
            assert!((ea.phi.unwrap() - eb.phi.unwrap()).abs() <= 1e-10);
            assert!((ea.psi.unwrap() - eb.psi.unwrap()).abs() <= 1e-10);
        }
    }
}

fn quick_mcs(seed: u64, alpha: f64, statistic: McsStatistic) -> McsConfig {
    McsConfig {
        alpha,
        replications: 2000,
        block_length: 2,
        statistic,
        seed,
    }
}

/// Three comparable models plus one whose losses carry a +1 offset.
fn offset_losses(seed: u64) -> Vec<LossSeries> {
    let mut r = rng(seed);
    let base: Vec<f64> = (0..20).map(|_| 5.0 + normal(&mut r).abs()).collect();
    let mut out: Vec<LossSeries> = ["a", "b", "c"]
        .iter()
        .map(|m| LossSeries {
            model: m.to_string(),
            losses: base.iter().map(|v| v + 0.05 * normal(&mut r)).collect(),
        })
        .collect();
    out.push(LossSeries {
        model: "offset".into(),
        losses: base.iter().map(|v| v + 1.0 + 0.05 * normal(&mut r)).collect(),
    });
    out
}

#[test]
fn mcs_eliminates_offset_model_first() {
    for statistic in [McsStatistic::SemiQuadratic, McsStatistic::Range] {
        for seed in 0..10 {
            let report = mcs(&offset_losses(seed), &quick_mcs(seed, 0.01, statistic)).unwrap();
            let first = &report.steps[0];
            assert_eq!(first.model, "offset", "seed {seed}");
            assert!(first.p_value < 0.01, "seed {seed}: p = {}", first.p_value);
            assert!(!report.survivors.contains(&"offset".to_string()));
        }
    }
}

#[test]
fn mcs_p_values_non_decreasing_and_alpha_zero_keeps_all() {
    for seed in 0..5 {
        let losses = offset_losses(seed);
        let report = mcs(&losses, &quick_mcs(seed, 0.0, McsStatistic::SemiQuadratic)).unwrap();
        assert_eq!(report.survivors.len(), losses.len());
        let ps: Vec<f64> = report.steps.iter().map(|s| s.p_value).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]), "{ps:?}");
        assert_eq!(*ps.last().unwrap(), 1.0);
    }
}

#[test]
fn mcs_single_model_and_determinism() {
    let one = vec![LossSeries {
        model: "only".into(),
        losses: vec![1.0, 2.0, 3.0],
    }];
    let report = mcs(&one, &McsConfig::default()).unwrap();
    assert_eq!(report.p_value("only"), Some(1.0));
    assert_eq!(report.survivors, vec!["only".to_string()]);

    let losses = offset_losses(3);
    let cfg = quick_mcs(77, 0.01, McsStatistic::SemiQuadratic);
    let a = mcs(&losses, &cfg).unwrap().to_json().unwrap();
    let b = mcs(&losses, &cfg).unwrap().to_json().unwrap();
    assert_eq!(a.as_bytes(), b.as_bytes());
}
