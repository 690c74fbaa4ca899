//! Drive a run from a TOML config, the way the `pe-mpc` binary does.

use pe_mpc::cli;
use pe_mpc::config::parse_config_str;

fn main() {
    let text = "\
N_s = 300
case = 2
epsilon = 0.3
seed = 7
";
    let cfg = parse_config_str(text).expect("valid config");
    println!("{}", cfg.to_toml().expect("serializable"));
    match parse_config_str("T = 10") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    let dir = std::env::temp_dir().join("pe-mpc-config-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("run.toml");
    std::fs::write(&path, text).expect("config written");
    let out = dir.join("out");
    let code = cli::main_with_args([
        "pe-mpc",
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    println!("exit code {code}; files in {}", out.display());
}
