//! Trains the reference checkpoint and prints extrapolation metrics.
//!
//! cargo run --release -p dype-core --example train_reference -- OUT.ckpt [steps]

use std::time::Instant;

use dype_core::dataggen::{generate, generate_mix, reference_mixture, DatasetSpec};
use dype_core::evalkit::{evaluate, policy_for, reference_spectrum, EvalSettings};
use dype_core::tinydit::{train_with, Checkpoint, ModelConfig, TrainConfig};
use dype_core::PolicyKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).cloned().unwrap_or_else(|| "reference.ckpt".into());
    let cfg = ModelConfig::reference();
    let mut opt = TrainConfig::reference();
    if let Some(s) = args.get(2) {
        opt.steps = s.parse()?;
    }
    let data = generate_mix(&reference_mixture(cfg.image_side))?;
    let start = Instant::now();
    let ck = train_with(&cfg, &data, &opt, |step, loss| {
        if step % 100 == 0 {
            eprintln!("step {step} loss {loss:.4} ({:.0}s)", start.elapsed().as_secs_f64());
        }
    })?;
    eprintln!("trained in {:.0}s", start.elapsed().as_secs_f64());
    ck.save(out.as_ref())?;
    eprintln!(
        "tail loss {:.4} vs zero-model {:.4}",
        ck.training.tail_mean().unwrap_or(f64::NAN),
        ck.training.baseline_loss
    );
    report(&ck)
}

fn report(ck: &Checkpoint) -> Result<(), Box<dyn std::error::Error>> {
    let model = ck.model();
    let test = 2 * model.config().image_side;
    let reference = reference_spectrum(&generate(&DatasetSpec::power_law(2.0, test, 256, 101))?.images)?;
    let settings = EvalSettings::new(model.config().image_side, test);
    for seed in 0..5u64 {
        let mut line = format!("seed {seed}:");
        for kind in [
            PolicyKind::Vanilla,
            PolicyKind::Yarn,
            PolicyKind::DyYarn,
            PolicyKind::Pi,
            PolicyKind::DyPi,
            PolicyKind::Ntk,
        ] {
            let r = evaluate(model, &policy_for(kind, model, test)?, &reference, &settings, seed)?;
            line.push_str(&format!(
                " {kind} art={:.4} sd={:.4}",
                r.artifact_score, r.spectral_distance
            ));
        }
        eprintln!("{line}");
    }
    Ok(())
}
