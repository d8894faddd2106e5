#![allow(dead_code)]

use std::path::Path;

pub const SMALL: &str = r#"
master_seed = 11
n_sims = 300

[priors]
p_separate = 0.9
p_dte = 0.7
post_hr = { family = "gamma", shape = 29.6, rate = 47.8 }
delay_months = { family = "gamma", shape = 7.29, rate = 1.76 }
control = { lambda_per_month = { family = "point_mass", value = 0.08 }, gamma = { family = "point_mass", value = 1.0 } }

[design]
n_control = 100
n_experimental = 100
total_events = 150
recruitment_duration_months = 12.0
interim_fractions = [0.5]

[spending]
alpha_rule = "direct"
beta_rule = "direct"
direct_cumulative = [{ alpha = 0.0125, beta = 0.05 }, { alpha = 0.025, beta = 0.1 }]

[sweep]
one_look_fractions = [0.3, 0.6]

[bpp]
n_trials = 4
m_draws = 100
fractions = [0.5]

[sensitivity]
p_dte = 0.0
"#;

pub fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}
