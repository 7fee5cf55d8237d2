use backdoor_lab::config::RunConfig;
use backdoor_lab::experiments::{prepare_data, run_attack};
use backdoor_lab::inspector::{learn_patch, select_confidence_samples, transfer_ratio, PatchOptConfig};
use backdoor_lab::ImageTensor;

#[test]
fn purity_probe() {
    let config = RunConfig::default();
    let splits = prepare_data(&config).unwrap();
    let run = run_attack(&config, &splits).unwrap();
    println!("ba {:.3} asr {:?} rate {}", run.benign_accuracy, run.asr, run.final_rate);
    let sample = select_confidence_samples(&run.model, &run.poisoned_train, 0, 50).unwrap();
    let poisoned_in_high = sample.high.iter().filter(|ex| run.record.poisoned_indices.contains(&ex.index)).count();
    let poisoned_in_low = sample.low.iter().filter(|ex| run.record.poisoned_indices.contains(&ex.index)).count();
    println!("D_h poisoned {}/50, D_l poisoned {}/50 (total poisoned {})",
        poisoned_in_high, poisoned_in_low, run.record.poisoned_indices.len());

    let high: Vec<&ImageTensor> = sample.high.iter().map(|ex| &ex.image).collect();
    let low: Vec<&ImageTensor> = sample.low.iter().map(|ex| &ex.image).collect();
    let cfg = PatchOptConfig { max_iters: 500, seed: 5, ..Default::default() };
    let patch = learn_patch(&run.model, &high, 0, &cfg).unwrap();
    let (r, _) = transfer_ratio(&run.model, &patch, &low, 0).unwrap();
    let mut corner = 0.0f64;
    for row in 28..32 { for col in 28..32 { corner += patch.mask[row*32+col] as f64; } }
    println!("label 0: flip {:.2} l1 {:.1} corner {:.1} r {:.3}", patch.achieved_flip_rate, patch.mask_l1, corner, r);
}
