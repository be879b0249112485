//! Train a preset on the synthetic walk and print reconstruction and metrics.
//!
//! `cargo run --release --example smoke -- [preset] [key=value ...]` where keys
//! are `seed`, `mult`, `lr`, `hidden`, `batch`, `stop`, `tl` and `save`
//! (checkpoint path).

use oneshot_motion::evaluation::{evaluate, MetricsConfig};
use oneshot_motion::motion::to_feature_tensor;
use oneshot_motion::network::{derive_seed, Noise};
use oneshot_motion::synthetic;
use oneshot_motion::training::{final_reconstruction_error, train_all, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut save = None;
    let mut cfg = TrainConfig::preset(args.first().map(String::as_str).unwrap_or("abl9-smoke"))?;
    for kv in args.iter().skip(1) {
        let (k, v) = kv.split_once('=').ok_or("expected key=value")?;
        match k {
            "seed" => cfg.seed = v.parse()?,
            "mult" => cfg.iteration_multiplier = v.parse()?,
            "lr" => {
                cfg.lr_generator = v.parse()?;
                cfg.lr_discriminator = cfg.lr_generator;
            }
            "hidden" => cfg.network.hidden_per_joint = Some(v.parse()?),
            "batch" => cfg.batch_size = v.parse()?,
            "stop" => cfg.early_stop_rec = Some(v.parse()?),
            "tl" => cfg.transfer_learning = v == "1",
            "save" => save = Some(v.to_string()),
            _ => return Err(format!("unknown key {k}").into()),
        }
    }
    let clip = to_feature_tensor(&synthetic::walk_cycle(&synthetic::GaitParams::default(), 96))?;
    let (model, report) = train_all(&clip, &cfg)?;
    if let Some(path) = &save {
        oneshot_motion::network::save_checkpoint_file(&model, path)?;
    }
    for l in &report.levels {
        println!("level {} iters {} reached {:?} wall {:.0} ms rec {:.4}", l.level, l.iterations, l.reached_threshold_at, l.wall_ms, l.final_rec);
    }
    println!("sigma {:?}", report.noise_amplitudes);
    println!("final rec {:.4}", final_reconstruction_error(&model, &clip)?);
    let samples = (0..32u64)
        .map(|i| model.generate_full(&Noise::Seed(derive_seed(cfg.seed, i)), None))
        .collect::<Result<Vec<_>, _>>()?;
    let m = evaluate(&clip, &samples, &MetricsConfig::default())?;
    println!("{}", m.to_csv());
    println!("epsilon {:?}", m.epsilon);
    let rec = model.generate_full(&Noise::Reconstruction, None)?;
    println!("reconstruction coverage {}", oneshot_motion::evaluation::coverage(&clip, &[rec], 30, m.epsilon.unwrap())?);
    for k in 0..3 {
        let d = nn_profile(&clip, &samples[k])?;
        println!("sample {k} nn: min {:.2} med {:.2} max {:.2}", d[0], d[d.len() / 2], d[d.len() - 1]);
        group_errors(&clip, &samples[k]);
    }
    Ok(())
}

fn nn_profile(clip: &oneshot_motion::motion::MotionTensor, g: &oneshot_motion::motion::MotionTensor) -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    use oneshot_motion::evaluation::windows::{nearest_distances, windows};
    use ndarray::Axis;
    let mean = clip.features.mean_axis(Axis(0)).unwrap();
    let std = clip.features.std_axis(Axis(0), 0.0).mapv(|s| s.max(0.1));
    let q = windows(((&clip.features - &mean) / &std).view(), 30)?;
    let p = windows(((&g.features - &mean) / &std).view(), 30)?;
    let mut d = nearest_distances(&q, &p);
    d.sort_by(|a, b| a.total_cmp(b));
    Ok(d)
}

fn group_errors(clip: &oneshot_motion::motion::MotionTensor, g: &oneshot_motion::motion::MotionTensor) {
    use ndarray::Axis;
    let mean = clip.features.mean_axis(Axis(0)).unwrap();
    let std = clip.features.std_axis(Axis(0), 0.0).mapv(|s| s.max(0.1));
    let a = (&clip.features - &mean) / &std;
    let b = (&g.features - &mean) / &std;
    // best alignment of the first 30 generated frames
    let mut best = (f64::INFINITY, 0);
    for s in 0..=a.nrows() - 30 {
        let d: f64 = (0..30).map(|t| (&a.row(s + t) - &b.row(t)).mapv(|v| v * v).sum()).sum();
        if d < best.0 { best = (d, s); }
    }
    let f = a.ncols();
    let mut per = vec![0.0; f];
    for t in 0..30 {
        for c in 0..f { per[c] += (a[[best.1 + t, c]] - b[[t, c]]).powi(2); }
    }
    let rot: f64 = per[..48].iter().sum();
    let con: f64 = per[48..50].iter().sum();
    let root: Vec<String> = per[50..].iter().map(|v| format!("{v:.1}")).collect();
    println!("  total {:.1} rot {rot:.1} contacts {con:.1} root {root:?} std root {:?}", best.0, std.slice(ndarray::s![50..]).to_vec());
}
