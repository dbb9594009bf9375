use nbrgds::data::MaskSpec;
use nbrgds::dist::{sample_gamma, sample_poisson};
use nbrgds::inference::{run_gibbs, Schedule};
use nbrgds::model::{generate_counts, sample_prior, ModelConfig};
use nbrgds::rng::RngStream;

fn main() {
    let mut config = ModelConfig::new(10, 200, 3, 2);
    config.eps0 = 1.0;
    config.eps0_theta = 0.5;
    config.psi = 2.0;
    let mut rng = RngStream::new(701, 0);
    let mut state = sample_prior(&config, &mut rng).unwrap();
    for k in 0..3 { state.lambda[k] = 8.0; state.theta[(k, 0)] = 8.0; }
    state.delta.fill(1.0);
    for t in 0..config.t {
        for k in 0..3 {
            let mut drive = 0.0;
            for k2 in 0..3 { drive += state.pi[(k, k2)] * state.theta[(k2, t)]; }
            let h_hat = sample_gamma(config.tau * drive, config.psi, &mut rng).unwrap();
            let h = sample_poisson(h_hat, &mut rng).unwrap();
            state.h_hat[(k, t)] = h_hat;
            state.h[(k, t)] = h;
            state.theta[(k, t + 1)] = sample_gamma(config.eps0_theta + h as f64, config.tau, &mut rng).unwrap();
        }
    }
    let counts = generate_counts(&config, &state, &mut rng).unwrap();
    println!("data total {} ", counts.values.iter().sum::<u64>());
    for init_psi in [0.5, 1.0, 2.0, 4.0] {
        let mut fit = config.clone();
        fit.sample_psi = true;
        fit.psi = init_psi;
        let schedule = Schedule::new(600, 0, 25).unwrap();
        let mut frng = RngStream::new(52, 0);
        let trace = run_gibbs(&counts, &MaskSpec::none(), &fit, schedule, &mut frng).unwrap();
        let psis: Vec<String> = trace.samples.iter().map(|s| format!("{:.2}", s.psi)).collect();
        println!("init {init_psi}: psi trajectory {}", psis.join(" "));
    }
}
