use stokeslab::action::{action_table, ActionOptions};
use stokeslab::branch::{locate, ScanOptions, ScanRegion};
use stokeslab::harness::{adiabatic_pipeline, resolve_options};
use stokeslab::model::HamiltonianModel;

fn main() {
    let model = HamiltonianModel::goe_interp(6, 2.0, 1).unwrap();
    // Wide & tall rank-aware scan
    let region = ScanRegion { re_min: -9.0, re_max: 9.0, im_min: 0.0, im_max: 2.8 };
    let set = locate(&model, &region, &ScanOptions { nx: 180, ny: 64, ..Default::default() }).unwrap();
    let actions = action_table(&model, &set, &ActionOptions::default()).unwrap();
    for (k, p) in set.points.iter().enumerate() {
        if p.levels == (0, 1) || p.levels.1 - p.levels.0 > 1 {
            println!("pair {:?} tau* ({:+.4},{:.4}) lambda {:.4}", p.levels, p.tau_star.re, p.tau_star.im, actions.lambda[k]);
        }
    }
    // Chains for 0->1 and 3->0 in the standard pipeline
    let opts = resolve_options(&Default::default());
    let arts = adiabatic_pipeline(&model, 1, &ScanRegion::standard(), &opts).unwrap();
    for pred in &arts.predictions {
        if (pred.from, pred.to) == (0, 1) || (pred.from, pred.to) == (3, 0) {
            println!("--- {} -> {}", pred.from + 1, pred.to + 1);
            for s in &pred.sequences {
                println!("  chain {:?} total {:.4} topo {:?} emp {:?} min {}",
                    s.chain.iter().map(|&b| {
                        let p = &arts.set.points[b];
                        format!("({},{})@{:.2}", p.levels.0+1, p.levels.1+1, p.tau_star.re)
                    }).collect::<Vec<_>>(),
                    s.total_action, s.verdict_topological, s.verdict_empirical, s.is_minimal);
            }
        }
    }
}
