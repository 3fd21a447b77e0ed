//! What the `horosim` binary does, in process: parse a config, run the
//! subcommand and write its CSV and JSON.

use horosim::cli::{dispatch, parse_config, write_outputs, Subcommand};

const CONFIG: &str = r#"
seed = 17
d = 1
sides = [8]
beta = 2
h_rule = "inverse_volume"

[chain]
num_sweeps = 4000
burn_in = 400
chains = 2
"#;

pub fn run_example() -> horosim::Result<()> {
    let cfg = parse_config(CONFIG, Subcommand::Ward)?;
    let outcome = dispatch(&cfg)?;
    for c in &outcome.checks {
        println!("{:<24} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    let dir = std::env::temp_dir().join("horosim-run-config");
    let (csv, json) = write_outputs(&cfg, &outcome, &dir)?;
    println!("wrote {} and {}", csv.display(), json.display());

    if let Err(e) = parse_config("d = 3\nsides = [4, 4]\nbeta = 2\nhh = 1\n", Subcommand::Ward) {
        println!("rejected config:\n{e}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
