//! Cross-checks of quadrature and table results against direct sums over independently
//! sampled loops.

use loopsoup::chaos::{kernel_norm, Flavor, KernelSpec, PairLaw, PairQuadrature};
use loopsoup::geometry::QuadGrid;
use loopsoup::loopmeasure::{replicate, AlphaTable, Budget, CutoffConfig, LoopSampler, Region, TableSpec};
use loopsoup::{Domain, Estimate};

#[test]
fn first_chaos_norm_matches_direct_loop_sum() {
    // ‖f₁‖² = s·∫(Σ_i a_i h² 1{γ covers z_i})² dμ(γ) over loops of diameter ≥ δ.
    let domain = Domain::unit_disk();
    let grid = QuadGrid::uniform(&domain, 6).unwrap();
    let (lambda, beta, delta) = (1.0, 0.5, 0.2);
    let cut = CutoffConfig::new(delta).with_steps(1024);
    let budget = |seed| Budget { lambda: 50.0, n_rep: 40, seed };
    let table = AlphaTable::build(TableSpec {
        domain,
        points: grid.centers.clone(),
        delta_list: vec![2.0 * delta],
        cutoffs: cut.clone(),
        budget: budget(1),
    })
    .unwrap();
    let weights: Vec<f64> = grid.centers.iter().map(|z| 1.0 + z.re).collect();
    let k = KernelSpec { flavor: Flavor::Poisson { lambda, beta }, weights: weights.clone(), q: 1 };
    let quad = PairQuadrature::new(&table, &grid, PairLaw::Cutoff(delta)).unwrap();
    let norm = kernel_norm(&k, &quad).unwrap();

    let sampler = LoopSampler::new(domain, cut, Region::Near(grid.centers.clone())).unwrap();
    let b = budget(2);
    let h2 = grid.cell_area();
    let per_rep = replicate(&sampler, &b, "oracle", |_, loops| {
        loops
            .iter()
            .map(|l| {
                let s: f64 = l.covers.iter().map(|c| weights[c.point as usize] * h2).sum();
                s * s
            })
            .sum::<f64>()
            / b.lambda
    });
    let direct = Estimate::from_samples(&per_rep);
    let s = 0.5 * lambda * ((beta.exp() - 1.0).powi(2) + ((-beta).exp() - 1.0).powi(2));
    let (v, se) = (s * direct.value, s * direct.stderr);
    // Table and oracle have equal budgets, hence comparable errors.
    assert!((norm - v).abs() <= 4.0 * std::f64::consts::SQRT_2 * se, "quadrature {norm} vs direct {v} ± {se}");
}

#[test]
fn ball_mass_law_through_sampler_and_table_agree() {
    // (1/5)ln(R/δ) from an annulus around an interior point, through an independent table.
    let domain = Domain::unit_disk();
    let z = loopsoup::Point::new(0.1, -0.2);
    let table = AlphaTable::build(TableSpec {
        domain,
        points: vec![z],
        delta_list: vec![0.3],
        cutoffs: CutoffConfig::new(0.15).with_steps(1024),
        budget: Budget { lambda: 100.0, n_rep: 200, seed: 9 },
    })
    .unwrap();
    let e = table.alpha_window(0, 0.15, 0.6).unwrap();
    let exact = 0.2 * (0.6f64 / 0.15).ln();
    // The balanced raster leaves up to ~1.5% bias in the filled area.
    assert!((e.value - exact).abs() <= 3.0 * e.stderr + 0.015 * exact, "{e:?} vs {exact}");
}
