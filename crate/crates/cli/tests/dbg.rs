use relsr::commands::gradcheck::{check_module, check_discriminator};
use relsr::config::RunConfig;
use relsr_core::model::Model;
use relsr_core::synthdata;

#[test]
fn dbg_wide_scan() {
    let mut results = Vec::new();
    for seed in (1u64..=48).map(|s| s * 31 + 5) {
        let mut cfg = RunConfig::default();
        cfg.h = 16; cfg.n = 4; cfg.j = 8; cfg.c = 4; cfg.k = 3; cfg.f = 8;
        cfg.hr_size = 8; cfg.scale = 4;
        cfg.gen_channels = 8; cfg.enc_channels = 8; cfg.disc_channels = 8; cfg.perc_channels = 6;
        cfg.seed = seed;
        let model = Model::init(&cfg.model_config()).unwrap();
        let sample = synthdata::make_sample(cfg.seed, 0, cfg.hr_size, cfg.scale).unwrap();
        let mut worst: f64 = 0.0;
        for prefix in ["enc.", "gdm.", "cgm."] {
            let params: relsr_core::gradcheck::ParamMap = model
                .generator_side_param_map()
                .into_iter()
                .filter(|(name, _)| name.starts_with(prefix))
                .collect();
            let r = check_module(&model, &sample.lr, &sample.hr, params, cfg.alpha).unwrap();
            worst = worst.max(r.max_rel_err);
        }
        let fake = model.reconstruct(&sample.lr, None).unwrap();
        let rd = check_discriminator(&model, &sample.hr, &fake).unwrap();
        worst = worst.max(rd.max_rel_err);
        println!("seed={seed} worst={worst:.3e}");
        results.push(worst);
    }
    let best = results.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("BEST over {} seeds: {best:.3e}", results.len());
    panic!("debug");
}
