//! Test accuracy as a function of the uploader cluster count on planted data.
//!
//! cargo run --release --example k_sweep -- [--ks 1,12,24,48,96] [--seeds 1,2,3] [--hidden 64] [--layers 2]
//!
//! Prints one tab-separated row per K: the accuracy of each dataset seed on
//! its temporal 70/15/15 split, then the mean.

use std::process::exit;

use dugraph::dataset::temporal_split;
use dugraph::graph::build_graph;
use dugraph::model::GraphPlan;
use dugraph::pipeline::{run_experiment, ExperimentConfig};
use dugraph::synth::{generate, SynthConfig};

fn list<T: std::str::FromStr>(flag: &str, value: &str) -> Vec<T> {
    value
        .split(',')
        .map(|v| {
            v.trim().parse().unwrap_or_else(|_| {
                eprintln!("{flag}: cannot parse {v:?}");
                exit(1)
            })
        })
        .collect()
}

fn main() {
    let mut ks = vec![1usize, 12, 24, 48, 96];
    let mut seeds = vec![1u64, 2, 3];
    let mut cfg = ExperimentConfig::default();
    cfg.net.hidden_dim = 64;
    cfg.net.num_layers = 2;

    let args: Vec<String> = std::env::args().skip(1).collect();
    for pair in args.chunks(2) {
        let [flag, value] = pair else {
            eprintln!("{} needs a value", pair[0]);
            exit(1)
        };
        match flag.as_str() {
            "--ks" => ks = list(flag, value),
            "--seeds" => seeds = list(flag, value),
            "--hidden" => cfg.net.hidden_dim = list(flag, value)[0],
            "--layers" => cfg.net.num_layers = list(flag, value)[0],
            other => {
                eprintln!("unknown flag {other}");
                exit(1)
            }
        }
    }

    let data: Vec<_> = seeds
        .iter()
        .map(|&seed| {
            let (ds, _) = generate(&SynthConfig { seed, ..Default::default() }).expect("default config is valid");
            let split = temporal_split(&ds, 0.7, 0.15).expect("synthetic data is labeled");
            (ds, split)
        })
        .collect();

    let header: Vec<String> = seeds.iter().map(|s| format!("seed_{s}")).collect();
    println!("k\t{}\tmean", header.join("\t"));
    for &k in &ks {
        cfg.graph.k_clusters = k;
        let accs: Vec<f64> = data
            .iter()
            .map(|(ds, split)| {
                let graph = build_graph(ds, &cfg.graph).expect("graph builds");
                let plan = GraphPlan::new(&graph, cfg.net.time_dim).expect("plan builds");
                run_experiment(&graph, &plan, ds, split, &cfg).expect("experiment runs").test.accuracy
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let cells: Vec<String> = accs.iter().map(|a| format!("{a:.4}")).collect();
        println!("{k}\t{}\t{mean:.4}", cells.join("\t"));
    }
}
