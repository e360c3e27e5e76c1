//! Scratch calibration runner (not part of the deliverable test suite):
//! sweeps synthetic-data knobs and prints per-ratio baseline/GFN metrics
//! so the desk-scale defaults can be pinned empirically.

use std::time::Instant;

use gfn_core::encoders::{CropProtocol, TrainConfig};
use gfn_core::fusion::FusionTrainConfig;
use gfn_core::harness::{run_suite, ExperimentConfig, Variant};
use gfn_core::synth::SynthConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };

    let noise = get("--noise", 0.8);
    let d_latent = get("--d-latent", 16.0) as usize;
    let sep = get("--sep", 1.5);
    let spread = get("--spread", 1.0);
    let utts = get("--utts", 20.0) as usize;
    let epochs = get("--epochs", 40.0) as usize;
    let embed_dim = get("--embed-dim", 32.0) as usize;
    let hidden = get("--hidden", 64.0) as usize;
    let batch_n = get("--batch", 32.0) as usize;
    let seeds: Vec<u64> = (1..=get("--seeds", 2.0) as u64).collect();
    let gfn = args.iter().any(|a| a == "--gfn");
    let per_category = get("--per-category", 1000.0) as usize;

    let mut variants = vec![Variant::Baseline];
    if gfn {
        variants.push(Variant::Gfn);
        variants.push(Variant::Es);
        variants.push(Variant::FFt);
        variants.push(Variant::MFt);
    }

    let config = ExperimentConfig {
        synth: SynthConfig {
            d_latent,
            utterance_noise: noise,
            group_separation: sep,
            speaker_spread: spread,
            utterances_per_speaker: utts,
            ..SynthConfig::default()
        },
        total_speakers: 200,
        ratios: vec![(9, 1), (1, 1), (1, 9)],
        eval_speakers_per_group: get("--eval", 30.0) as usize,
        per_category,
        protocol: CropProtocol::default(),
        encoder_train: TrainConfig {
            epochs,
            embedding_dim: embed_dim,
            hidden_dims: vec![hidden; get("--layers", 2.0) as usize],
            speakers_per_batch: batch_n,
            learning_rate: get("--lr", 0.001),
            epoch_decay: get("--decay", 0.95),
            crop_frames: get("--crop", 100.0) as usize,
            ..TrainConfig::default()
        },
        fusion_train: FusionTrainConfig::default(),
        variants,
        seeds: seeds.clone(),
        workers: 0,
        output_dir: "/tmp/calib".into(),
    };

    println!(
        "noise={noise} d_latent={d_latent} sep={sep} spread={spread} utts={utts} epochs={epochs} \
         D={embed_dim} h={hidden} batch={batch_n} seeds={}",
        seeds.len()
    );
    let start = Instant::now();
    let record = run_suite(&config, std::path::Path::new("/tmp/calib")).unwrap();
    println!("suite wall: {:.1}s", start.elapsed().as_secs_f64());
    if !args.iter().any(|a| a == "--summary") {
        for cell in &record.cells {
            match cell.report() {
                Some(r) => println!(
                    "ratio {:>4}  {:<9} seed {}  EER[F]={:6.2}  EER[M]={:6.2}  EER[All]={:6.2}  DS={:6.2}",
                    cell.ratio_label,
                    cell.variant.as_str(),
                    cell.seed,
                    r.eer_f,
                    r.eer_m,
                    r.eer_all,
                    r.ds
                ),
                None => println!(
                    "ratio {:>4}  {:<9} seed {}  FAILED: {:?}",
                    cell.ratio_label,
                    cell.variant.as_str(),
                    cell.seed,
                    cell.status
                ),
            }
        }
    }

    // trend pass-counts over seeds, baseline variant
    let get_cell = |ratio: (u32, u32), seed: u64| {
        record
            .cell(ratio, Variant::Baseline, seed)
            .and_then(|c| c.report())
    };
    let mut ds9_gt = 0;
    let mut ds19_gt = 0;
    let mut min9 = 0;
    let mut min19 = 0;
    let mut all_eers = Vec::new();
    for &seed in &config.seeds {
        let (r9, r1, r19) = match (
            get_cell((9, 1), seed),
            get_cell((1, 1), seed),
            get_cell((1, 9), seed),
        ) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => continue,
        };
        if r9.ds > r1.ds {
            ds9_gt += 1;
        }
        if r19.ds > r1.ds {
            ds19_gt += 1;
        }
        if r9.eer_m > r9.eer_f {
            min9 += 1;
        }
        if r19.eer_f > r19.eer_m {
            min19 += 1;
        }
        all_eers.push(r1.eer_all);
    }
    let n = config.seeds.len();
    println!(
        "TREND: ds9>ds1 {ds9_gt}/{n}  ds19>ds1 {ds19_gt}/{n}  minority-worse@9:1 {min9}/{n}  minority-worse@1:9 {min19}/{n}  eer_all@1:1 {:?}",
        all_eers.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
    );

    // paired imbalance effects: gap(r) = EER_M - EER_F; e9 = gap(9:1)-gap(1:1)
    // (positive = minority-M penalty), e19 = gap(1:1)-gap(1:9)
    let mut e9s = Vec::new();
    let mut e19s = Vec::new();
    for &seed in &config.seeds {
        if let (Some(r9), Some(r1), Some(r19)) = (
            get_cell((9, 1), seed),
            get_cell((1, 1), seed),
            get_cell((1, 9), seed),
        ) {
            let gap = |r: &gfn_core::evaluation::MetricReport| r.eer_m - r.eer_f;
            e9s.push(gap(r9) - gap(r1));
            e19s.push(gap(r1) - gap(r19));
        }
    }
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:+.1}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("EFFECT: e9 [{}]  e19 [{}]", fmt(&e9s), fmt(&e19s));
}
