// scratch diagnostic: per-entry gradient norms at a saved checkpoint
use gpssm::checkpoint::load_checkpoint;
use gpssm::data::config::load_config;
use gpssm::data::experiment::prepare_data;
use gpssm::inference::elbo_gradient;
use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let config = load_config(Path::new(&args[1])).unwrap();
    let data = prepare_data(&config).unwrap();
    let cp = load_checkpoint(Path::new(&args[2])).unwrap();
    let (layout, theta) = cp.to_theta().unwrap();
    let mut worst = (0u64, 0.0f64, String::new());
    for s in 0..200u64 {
        let (est, grad) = elbo_gradient(
            &cp.structure,
            &layout,
            &theta,
            &data.train.observations,
            data.train.controls.as_ref(),
            1,
            s,
            &[],
        )
        .unwrap();
        let mut max = 0.0f64;
        let mut name = String::new();
        for (k, g) in grad.iter().enumerate() {
            if g.abs() > max {
                max = g.abs();
                name = layout.entry_at(k).name.clone();
            }
        }
        if max > 1e4 {
            println!(
                "seed {s:4} |g|max {max:14.1} at {name:14} ell {:10.1} tkl {:10.1}",
                est.expected_log_lik, est.expected_transition_kl
            );
        }
        if max > worst.1 {
            worst = (s, max, name);
        }
    }
    println!("worst: seed {} |g|max {:.3e} at {}", worst.0, worst.1, worst.2);
}
