//! Wall-clock of batch-16 against batch-1 training at equal sample count.

use oneshot_motion::motion::to_feature_tensor;
use oneshot_motion::synthetic;
use oneshot_motion::training::{time_training_steps, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig::preset("abl9-smoke")?;
    let clip = to_feature_tensor(&synthetic::walk_cycle(&synthetic::GaitParams::default(), 96))?;
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let which = std::env::args().nth(2).unwrap_or_default();
    if which != "1" {
        let b16 = time_training_steps(&clip, &cfg, 16, n)?;
        println!("batch16 x{n}: {b16:.0} ms");
    }
    if which != "16" {
        let b1 = time_training_steps(&clip, &cfg, 1, 16 * n)?;
        println!("batch1 x{}: {b1:.0} ms", 16 * n);
    }
    Ok(())
}
