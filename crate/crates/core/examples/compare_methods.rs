//! Trains every method on the default benchmark and prints seed-averaged
//! final accuracies.
//!
//!     cargo run --release --example compare_methods -- [seeds] [method,method,...]

use largo_core::data::{generate, ShiftSpec};
use largo_core::train::{pretrain, train_run, Method, PretrainConfig, RunConfig};

fn main() -> largo_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(2, |s| s.parse().expect("seed count"));
    let methods: Vec<Method> = match args.get(2) {
        Some(list) => list.split(',').map(|m| Method::parse(m).expect("method name")).collect(),
        None => Method::ALL.to_vec(),
    };
    let mut sums = vec![(0.0, 0.0); methods.len()];
    for seed in 0..seeds {
        let spec = ShiftSpec { seed, ..ShiftSpec::default() };
        let bundle = generate(&spec)?;
        let base = pretrain(&PretrainConfig { seed, ..Default::default() }, &bundle.pretrain, spec.classes)?;
        let mut base_ood = 0.0;
        for (_, b) in &bundle.ood {
            base_ood += base.accuracy(b)? / bundle.ood.len() as f64;
        }
        println!("seed {seed}: pretrained id {:.4} ood {base_ood:.4}", base.accuracy(&bundle.id_val)?);
        for (k, &method) in methods.iter().enumerate() {
            let cfg = RunConfig { method, seed, ..RunConfig::default() };
            let out = train_run(&cfg, &bundle, &base)?;
            let last: Vec<_> = out.rows.iter().filter(|r| r.epoch == cfg.epochs).collect();
            let id = last.iter().find(|r| r.split_name == "id_val").expect("id_val row").accuracy;
            let ood: Vec<f64> = last
                .iter()
                .filter(|r| r.split_name != "id_val" && r.split_name != "id_train")
                .map(|r| r.accuracy)
                .collect();
            let ood_avg = ood.iter().sum::<f64>() / ood.len() as f64;
            sums[k].0 += id;
            sums[k].1 += ood_avg;
            println!("  {method:12} id {id:.4} ood {ood_avg:.4} delta_l1 {:.3e}", last[0].delta_l1);
        }
    }
    for (k, m) in methods.iter().enumerate() {
        let n = seeds as f64;
        println!("mean {:12} id {:.4} ood {:.4}", m.as_str(), sums[k].0 / n, sums[k].1 / n);
    }
    Ok(())
}
