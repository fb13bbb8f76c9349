//! Prints the empirical quantities behind the frozen-benchmark acceptance
//! thresholds: per-sensor novelty rates, the LoI MSE/timing grid, epoch
//! monotonicity, and second-generation pretraining win rates.

use dtgap_core::config::StructureConfig;
use dtgap_core::orchestrator::{
    aggregate, run_experiment, second_generation_pretrain, ExperimentPlan, Loi,
};
use dtgap_core::sampler::{generate_design_records, ConfigSampler};
use dtgap_core::seeds::child_seed;
use dtgap_core::{Repository, TrussModel};

fn main() {
    let config = StructureConfig::default();
    let truss = TrussModel::bridge(&config).expect("bridge builds");
    let mut plan = ExperimentPlan::frozen_benchmark();
    if let Ok(lr) = std::env::var("DTGAP_CAL_LR") {
        plan.hyper.learning_rate = lr.parse().expect("DTGAP_CAL_LR parses");
        println!("lr override: {}", plan.hyper.learning_rate);
    }
    if let Ok(n) = std::env::var("DTGAP_CAL_FTN") {
        plan.finetune_n = n.parse().expect("DTGAP_CAL_FTN parses");
        println!("finetune_n override: {}", plan.finetune_n);
    }
    let quick = std::env::var("DTGAP_CAL_QUICK").is_ok();

    // Repository with the frozen design records.
    let mut repo = Repository::in_memory();
    repo.ingest(generate_design_records(&truss, plan.design_seed(), plan.record_count).unwrap())
        .unwrap();

    // --- Novelty calibration (criterion: per-sensor rate 5% +- 1%) ---
    if !quick {
    let sampler = ConfigSampler::new(truss.limits().clone());
    let probe_configs = sampler.sample_many(child_seed(plan.master_seed, "novelty-probe", 0), 10_000);
    let mut flags = vec![0usize; 42];
    for cfg in &probe_configs {
        let reading = truss.simulate(cfg).unwrap();
        let (_, flagged) = repo.is_novel(reading.values()).unwrap();
        for j in flagged {
            flags[j] += 1;
        }
    }
    let rates: Vec<f64> = flags.iter().map(|&c| c as f64 / 10_000.0).collect();
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    println!("novelty per-sensor rate: min {min:.4} mean {mean:.4} max {max:.4}");
    let outside = rates.iter().filter(|r| (**r - 0.05).abs() > 0.01).count();
    println!("novelty sensors outside 5%+-1%: {outside}/42");
    }

    // --- Frozen benchmark grid ---
    let lois: &[Loi] = if quick { &[Loi::A, Loi::B] } else { &Loi::ALL };
    let spec = plan.gap_spec();
    let start = std::time::Instant::now();
    let outcome = run_experiment(&truss, &repo, &spec, &plan, lois).unwrap();
    println!(
        "benchmark: {} cells in {:.1}s",
        outcome.rows.len(),
        start.elapsed().as_secs_f64()
    );
    let grid = aggregate(&outcome.rows);
    println!("loi epochs mean_mse train_s finetune_s novel");
    for cell in &grid {
        println!(
            "{} {:>2} {:.6e} {:.4} {:.4} {:.1}",
            cell.loi, cell.epochs, cell.mean_mse_m2, cell.mean_train_s, cell.mean_finetune_s,
            cell.mean_novel
        );
    }

    let mse_of = |loi: Loi, epochs: usize| {
        grid.iter()
            .find(|c| c.loi == loi && c.epochs == epochs)
            .map(|c| c.mean_mse_m2)
            .unwrap()
    };
    let time_of = |loi: Loi, epochs: usize| {
        grid.iter()
            .find(|c| c.loi == loi && c.epochs == epochs)
            .map(|c| c.mean_train_s + c.mean_finetune_s)
            .unwrap()
    };
    println!("epochs  improvement(B vs A)  C-vs-B  t(B)/t(A)  t(C)/t(B)");
    for &e in &plan.epoch_budgets {
        let (a, b) = (mse_of(Loi::A, e), mse_of(Loi::B, e));
        let c = if quick { b } else { mse_of(Loi::C, e) };
        let tc = if quick {
            f64::NAN
        } else {
            time_of(Loi::C, e) / time_of(Loi::B, e)
        };
        println!(
            "{e:>2}  {:+.2}%  {:+.2}%  {:.3}  {tc:.3}",
            100.0 * (a - b) / a,
            100.0 * (c - b) / b,
            time_of(Loi::B, e) / time_of(Loi::A, e),
        );
    }
    for &loi in lois {
        let (e1, e10) = (mse_of(loi, 1), mse_of(loi, 10));
        println!(
            "monotonicity {loi}: mse@1 {e1:.6e} mse@10 {e10:.6e} ok={}",
            e10 <= e1
        );
    }
    if quick {
        return;
    }

    // --- Second-generation pretraining ---
    println!("novel union: {} records", outcome.novel_records.len());
    let mut augmented = repo.detached_copy();
    augmented.ingest(outcome.novel_records.clone()).unwrap();
    let mut wins = 0;
    for k in 0..10u64 {
        let asset_seed = child_seed(plan.master_seed, "secondgen", k);
        let sg = second_generation_pretrain(
            &truss,
            &repo,
            &augmented,
            &plan.hyper,
            1,
            200,
            asset_seed,
        )
        .unwrap();
        let win = sg.augmented_mse_m2 < sg.original_mse_m2;
        wins += win as usize;
        println!(
            "secondgen seed {k}: original {:.6e} augmented {:.6e} win={win}",
            sg.original_mse_m2, sg.augmented_mse_m2
        );
    }
    println!("secondgen wins: {wins}/10");
}
